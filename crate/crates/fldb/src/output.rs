//! CSV emission: one row per `(seed, t)`.

use std::fmt::Write as _;
use std::io::{self, Write};

use fldb_core::{summarize, Algorithm, Summary, TrialOutput};

pub const HEADER: &str =
    "seed,algo,N,K,d,tau,alpha,lambda,sigma,t,cum_regret_total,avg_per_agent,comm_rounds,monitor_hits";

/// Decimal rendering with 12 significant digits, trailing zeros trimmed.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // Round to 12 significant digits first, then print that value in plain
    // decimal notation.
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp < 0 {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(&digits);
    } else {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(&digits);
            for _ in digits.len()..int_len {
                out.push('0');
            }
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    }
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    out
}

/// Appends the rows of one trial to `buf`.
pub fn push_rows(buf: &mut String, out: &TrialOutput) {
    let c = &out.config;
    let d = out.theta_star.as_ref().map_or(c.dim, |t| t.dim());
    let prefix = format!(
        "{},{},{},{},{},{},{},{},{}",
        c.seed,
        c.algo,
        c.agents,
        c.arms,
        d,
        c.tau,
        fmt_real(c.alpha),
        fmt_real(c.lambda()),
        fmt_real(c.sigma),
    );
    let curve = &out.curve;
    for i in 0..curve.len() {
        writeln!(
            buf,
            "{prefix},{},{},{},{},{}",
            i + 1,
            fmt_real(curve.cum_regret_total[i]),
            fmt_real(curve.avg_per_agent[i]),
            curve.comm_rounds[i],
            curve.monitor_hits[i],
        )
        .expect("writing to a String cannot fail");
    }
}

/// Full CSV text (header plus every trial's rows, in the given order).
pub fn render_csv<'a>(trials: impl IntoIterator<Item = &'a TrialOutput>) -> String {
    let mut buf = String::new();
    buf.push_str(HEADER);
    buf.push('\n');
    for t in trials {
        push_rows(&mut buf, t);
    }
    buf
}

/// Final average regret per seed, grouped by algorithm and the swept
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub algo: Algorithm,
    pub agents: usize,
    pub arms: usize,
    pub tau: u64,
    pub sigma: f64,
    pub finals: Vec<f64>,
    pub summary: Summary,
    pub comm_rounds: u64,
}

pub fn group_summaries<'a>(trials: impl IntoIterator<Item = &'a TrialOutput>) -> Vec<GroupSummary> {
    let mut groups: Vec<GroupSummary> = Vec::new();
    for t in trials {
        let c = &t.config;
        let existing = groups
            .iter_mut()
            .find(|g| g.algo == c.algo && g.agents == c.agents && g.arms == c.arms && g.tau == c.tau && g.sigma == c.sigma);
        match existing {
            Some(g) => g.finals.push(t.curve.final_avg()),
            None => groups.push(GroupSummary {
                algo: c.algo,
                agents: c.agents,
                arms: c.arms,
                tau: c.tau,
                sigma: c.sigma,
                finals: vec![t.curve.final_avg()],
                summary: summarize(&[]),
                comm_rounds: t.curve.final_comm_rounds(),
            }),
        }
    }
    for g in &mut groups {
        g.summary = summarize(&g.finals);
    }
    groups
}

pub fn write_summary<W: Write>(mut w: W, groups: &[GroupSummary]) -> io::Result<()> {
    writeln!(w, "algo,N,K,tau,sigma,seeds,final_avg_mean,final_avg_stderr,comm_rounds")?;
    for g in groups {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            g.algo,
            g.agents,
            g.arms,
            g.tau,
            fmt_real(g.sigma),
            g.summary.n,
            fmt_real(g.summary.mean),
            fmt_real(g.summary.stderr),
            g.comm_rounds
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_formatting() {
        assert_eq!(fmt_real(0.0), "0");
        assert_eq!(fmt_real(1000.0), "1000");
        assert_eq!(fmt_real(0.002), "0.002");
        assert_eq!(fmt_real(-2.5), "-2.5");
        assert_eq!(fmt_real(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_real(123_456.789_012_345_67), "123456.789012");
        assert_eq!(fmt_real(1e15), "1000000000000000");
        assert_eq!(fmt_real(2.0 / 3.0 * 1e-5), "0.00000666666666667");
        assert_eq!(fmt_real(9.9999999999999), "10");
    }

    #[test]
    fn formatting_keeps_twelve_digits() {
        for &x in &[std::f64::consts::PI, 1.0e-7 / 7.0, 98765.4321987654, -0.1] {
            let s = fmt_real(x);
            let back: f64 = s.parse().unwrap();
            assert!(((back - x) / x).abs() < 5e-12, "{x} -> {s}");
        }
    }
}
