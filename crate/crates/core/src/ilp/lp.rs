use std::fmt::Write;

use super::IlpModel;

fn num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// Writes the model in CPLEX LP format. Variables appear in model order.
pub fn emit_lp(model: &IlpModel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ {} variables ({} decision), {} constraints",
        model.num_vars(),
        model.num_decision,
        model.rows.len()
    );
    out.push_str("Maximize\n obj:");
    for (i, (&c, name)) in model.objective.iter().zip(&model.names).take(model.num_decision).enumerate() {
        match (i, c < 0.0) {
            (0, false) => write!(out, " {} {name}", num(c)),
            (0, true) => write!(out, " - {} {name}", num(-c)),
            (_, false) => write!(out, " + {} {name}", num(c)),
            (_, true) => write!(out, " - {} {name}", num(-c)),
        }
        .expect("string write");
    }
    out.push_str("\nSubject To\n");
    for (r, row) in model.rows.iter().enumerate() {
        let _ = write!(out, " c{r}:");
        if row.terms.is_empty() {
            match model.names.first() {
                Some(n) => {
                    let _ = write!(out, " 0 {n}");
                }
                None => out.push_str(" 0"),
            }
        }
        for (i, &(v, c)) in row.terms.iter().enumerate() {
            let sign = match (i, c < 0) {
                (0, false) => "",
                (0, true) => " -",
                (_, false) => " +",
                (_, true) => " -",
            };
            out.push_str(sign);
            if c.abs() == 1 {
                let _ = write!(out, " {}", model.names[v]);
            } else {
                let _ = write!(out, " {} {}", c.abs(), model.names[v]);
            }
        }
        let _ = writeln!(out, " {} {}", row.rel, row.rhs);
    }
    out.push_str("Binary\n");
    for n in &model.names {
        let _ = writeln!(out, " {n}");
    }
    out.push_str("End\n");
    out
}
