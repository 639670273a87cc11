//! `dtw`, `envelope` and `lb` subcommands.

use std::path::Path;

use dtwcert::format::fmt_float;
use dtwcert::series::load_series;
use dtwcert::{dtw_distance, keogh_envelope, keogh_lower_bound, Norm, Window};

use crate::error::{CliError, Result};

/// A window given inline (`0,1;2,3` is two timesteps of two channels) or
/// as a path to a headered CSV file.
pub fn parse_window(arg: &str) -> Result<Window> {
    let path = Path::new(arg);
    if path.is_file() {
        let s = load_series(path)?;
        return Ok(Window::new(s.values().to_vec(), s.len(), s.channels(), s.len() - 1)?);
    }
    let rows: Vec<Vec<f64>> = arg
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("cannot parse {v:?} in {arg:?}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let channels = rows[0].len();
    if rows.iter().any(|r| r.len() != channels) {
        return Err(CliError::Usage(format!("rows of {arg:?} have different lengths")));
    }
    let len = rows.len();
    Ok(Window::new(rows.concat(), len, channels, len - 1)?)
}

pub fn parse_norm(arg: &str) -> Result<Norm> {
    arg.parse().map_err(|e: dtwcert::dtw::DtwError| CliError::Usage(e.to_string()))
}

pub fn cmd_dtw(a: &Window, b: &Window, w: usize, p: Norm) -> Result<String> {
    Ok(fmt_float(dtw_distance(a, b, w, p)?))
}

pub fn cmd_lb(a: &Window, b: &Window, w: usize, p: Norm) -> Result<String> {
    let env = keogh_envelope(a, w)?;
    Ok(fmt_float(keogh_lower_bound(&env, b, p)?))
}

/// Envelope as CSV: `t,upper,lower` for one channel, otherwise
/// `t,upper_0,lower_0,upper_1,…`.
pub fn cmd_envelope(a: &Window, w: usize) -> Result<String> {
    let env = keogh_envelope(a, w)?;
    let c = a.channels();
    let mut out = String::from("t");
    if c == 1 {
        out.push_str(",upper,lower");
    } else {
        for k in 0..c {
            out.push_str(&format!(",upper_{k},lower_{k}"));
        }
    }
    out.push('\n');
    for t in 0..a.len() {
        out.push_str(&t.to_string());
        for k in 0..c {
            out.push(',');
            out.push_str(&fmt_float(env.upper_at(t, k)));
            out.push(',');
            out.push_str(&fmt_float(env.lower_at(t, k)));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_windows() {
        let w = parse_window("0,1;2,3;4,5").unwrap();
        assert_eq!((w.len(), w.channels()), (3, 2));
        assert_eq!(w.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(parse_window("0,1;2").is_err());
        assert!(parse_window("a").is_err());
    }

    #[test]
    fn ramp_envelope() {
        let x = parse_window("0;1;2;3").unwrap();
        assert_eq!(cmd_envelope(&x, 1).unwrap(), "t,upper,lower\n0,1,0\n1,2,0\n2,3,1\n3,3,2\n");
        assert_eq!(cmd_dtw(&x, &x, 1, Norm::L2).unwrap(), "0");
        let inside = parse_window("0.5;1;2;2.5").unwrap();
        assert_eq!(cmd_lb(&x, &inside, 1, Norm::L2).unwrap(), "0");
    }
}
