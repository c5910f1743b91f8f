//! Grid specifications: `a,b,c`, `lin:lo:hi:n` or `log:lo:hi:n`.

pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad number '{s}' in grid '{spec}': {e}"));
    let ranged = |rest: &str, log: bool| -> Result<Vec<f64>, String> {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid '{spec}' needs lo:hi:n"));
        }
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2].trim().parse().map_err(|e| format!("bad count in grid '{spec}': {e}"))?;
        if n < 2 || !(hi > lo) {
            return Err(format!("grid '{spec}' needs hi > lo and n >= 2"));
        }
        if log && !(lo > 0.0) {
            return Err(format!("log grid '{spec}' needs lo > 0"));
        }
        Ok((0..n)
            .map(|k| {
                let u = k as f64 / (n - 1) as f64;
                if log {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                }
            })
            .collect())
    };
    let values = if let Some(rest) = spec.strip_prefix("lin:") {
        ranged(rest, false)?
    } else if let Some(rest) = spec.strip_prefix("log:") {
        ranged(rest, true)?
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(format!("grid '{spec}' must contain finite values"));
    }
    Ok(values)
}
