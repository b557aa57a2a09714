//! CPLEX-style LP text export, for cross-checking encoded models with external solvers.

use std::fmt::Write;

use super::model::{MilpModel, ObjSense, RowSense, VarId};

/// `%.17g`-style rendering: 17 significant digits, trailing zeros trimmed.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.16e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, v);
        trim_zeros(&fixed)
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn sanitize(name: &str, idx: usize, prefix: char) -> String {
    let ok = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_[]().".contains(c));
    if ok {
        name.to_string()
    } else {
        format!("{prefix}{idx}")
    }
}

fn write_terms(out: &mut String, terms: &[(VarId, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
        return;
    }
    for (k, &(v, c)) in terms.iter().enumerate() {
        let sign = if c < 0.0 { '-' } else { '+' };
        if k == 0 && sign == '+' {
            let _ = write!(out, " {} {}", format_g17(c.abs()), names[v.0]);
        } else {
            let _ = write!(out, " {} {} {}", sign, format_g17(c.abs()), names[v.0]);
        }
    }
}

/// Renders `model` in LP format (objective, constraints, bounds, generals).
pub fn write_lp(model: &MilpModel) -> String {
    let names: Vec<String> = model
        .vars
        .iter()
        .enumerate()
        .map(|(j, v)| sanitize(&v.name, j, 'x'))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "\\ {}", model.name);
    out.push_str(match model.sense {
        ObjSense::Minimize => "Minimize\n",
        ObjSense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    if model.vars.is_empty() {
        out.push_str(" 0");
    } else {
        write_terms(&mut out, &model.objective.terms, &names);
    }
    if model.objective.constant != 0.0 {
        let c = model.objective.constant;
        let _ = write!(out, " {} {}", if c < 0.0 { '-' } else { '+' }, format_g17(c.abs()));
    }
    out.push_str("\nSubject To\n");
    for (i, row) in model.constraints.iter().enumerate() {
        let _ = write!(out, " {}:", sanitize(&row.name, i, 'c'));
        write_terms(&mut out, &row.terms, &names);
        let op = match row.sense {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        };
        let _ = writeln!(out, " {} {}", op, format_g17(row.rhs));
    }
    out.push_str("Bounds\n");
    for (j, v) in model.vars.iter().enumerate() {
        if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", names[j], format_g17(v.lower));
        } else {
            let _ = writeln!(
                out,
                " {} <= {} <= {}",
                format_g17(v.lower),
                names[j],
                format_g17(v.upper)
            );
        }
    }
    let ints: Vec<&str> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.integer)
        .map(|(j, _)| names[j].as_str())
        .collect();
    if !ints.is_empty() {
        out.push_str("Generals\n");
        for chunk in ints.chunks(8) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}
