use super::fit::FitResult;

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Render fits side by side: each coefficient on one line with significance
/// stars (* p<0.10, ** p<0.05, *** p<0.01) and its robust SE in parentheses
/// beneath. `rows` selects and orders coefficient labels; empty means every
/// label in order of first appearance.
pub fn render_table(columns: &[(String, &FitResult)], rows: &[&str]) -> String {
    let mut labels: Vec<String> = rows.iter().map(|s| s.to_string()).collect();
    if labels.is_empty() {
        for (_, fit) in columns {
            for c in &fit.coefficients {
                if !labels.contains(&c.label) {
                    labels.push(c.label.clone());
                }
            }
        }
    }

    let mut lines: Vec<(String, Vec<String>)> = Vec::new();
    lines.push((String::new(), columns.iter().map(|(h, _)| h.clone()).collect()));
    lines.push((String::new(), columns.iter().map(|(_, f)| f.model.tag().to_uppercase()).collect()));
    for label in &labels {
        let mut est = Vec::new();
        let mut se = Vec::new();
        for (_, fit) in columns {
            match fit.get(label) {
                Some(c) => {
                    est.push(format!("{:.1}{}", c.estimate, stars(c.p_value)));
                    se.push(format!("({:.1})", c.robust_se));
                }
                None if fit.is_dropped(label) => {
                    est.push("-".into());
                    se.push(String::new());
                }
                None => {
                    est.push(String::new());
                    se.push(String::new());
                }
            }
        }
        lines.push((label.clone(), est));
        lines.push((String::new(), se));
    }
    lines.push(("N (observations)".into(), columns.iter().map(|(_, f)| f.n_obs.to_string()).collect()));
    lines.push(("Individuals".into(), columns.iter().map(|(_, f)| f.n_individuals.to_string()).collect()));
    lines.push(("r²".into(), columns.iter().map(|(_, f)| format!("{:.2}", f.r_squared)).collect()));

    let stub = lines.iter().map(|(s, _)| s.chars().count()).max().unwrap_or(0);
    let width = lines
        .iter()
        .flat_map(|(_, cells)| cells.iter().map(|c| c.chars().count()))
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = String::new();
    for (head, cells) in &lines {
        let mut line = format!("{head:<stub$}");
        for c in cells {
            line.push_str(&format!("  {c:>width$}"));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.push_str("Cluster-robust standard errors in parentheses. * p<0.10, ** p<0.05, *** p<0.01\n");
    out
}
