use crate::error::{Error, Result};

/// `(mean, sample sd / √R)`; a single run has zero standard error.
pub fn aggregate_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("aggregate_stats needs at least one value".into()));
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok((mean, var.sqrt() / r.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let (m, s) = aggregate_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 0.5773502691896258).abs() < 1e-15);
        assert_eq!(aggregate_stats(&[4.0; 5]).unwrap(), (4.0, 0.0));
        assert_eq!(aggregate_stats(&[7.5]).unwrap(), (7.5, 0.0));
        assert!(aggregate_stats(&[]).is_err());
    }
}
