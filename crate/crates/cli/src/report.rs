//! CSV exports and static SVG regret plots.

use std::io::Write;
use std::path::Path;

use baymoth::benchmark::experiment::{source_usage, AggregateCurve, RunRecord};
use baymoth::policy::PolicyKind;

/// Label of the ablated knob, when the runs come from a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SettingColumn<'a>(pub Option<&'a str>);

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_trajectories(
    path: &Path,
    runs: &[RunRecord],
    setting: SettingColumn,
    record_timing: bool,
) -> anyhow::Result<()> {
    let dim = runs
        .iter()
        .flat_map(|r| r.trajectory.steps.first())
        .map(|s| s.x.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["policy".to_string(), "set".to_string()];
    header.extend(setting.0.map(str::to_string));
    header.extend(["seed".to_string(), "t".to_string()]);
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.extend(
        ["y", "regret", "branch", "selected_env", "ncc_max", "wall_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for r in runs {
        let traj = &r.trajectory;
        for (s, regret) in traj.steps.iter().zip(&traj.regret_curve) {
            let mut row = vec![traj.policy.to_string(), r.task.clone()];
            if setting.0.is_some() {
                row.push(opt(r.setting));
            }
            row.push(traj.seed.to_string());
            row.push(s.t.to_string());
            row.extend((0..dim).map(|i| opt(s.x.get(i))));
            row.push(s.y.to_string());
            row.push(regret.to_string());
            row.push(s.branch.name().to_string());
            row.push(opt(s.selected_env));
            row.push(opt(s.ncc_max()));
            row.push(if record_timing {
                (s.proposal_wall_time * 1e3).to_string()
            } else {
                String::new()
            });
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate(path: &Path, curves: &[AggregateCurve], setting: SettingColumn) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["policy", "set"];
    header.extend(setting.0);
    header.extend(["t", "mean", "std", "n"]);
    w.write_record(&header)?;
    for c in curves {
        for (t, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            let mut row = vec![c.policy.to_string(), c.task_set.clone()];
            if setting.0.is_some() {
                row.push(opt(c.setting));
            }
            row.extend([(t + 1).to_string(), m.to_string(), s.to_string(), c.n_runs.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Source usage per (policy, set, gamma) group of gated policies.
pub fn write_usage(path: &Path, groups: &[(f64, &[RunRecord])]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["policy", "set", "gamma", "source_id", "pct"])?;
    for &(gamma, runs) in groups {
        let mut keys: Vec<(PolicyKind, &str)> = Vec::new();
        for r in runs {
            let k = (r.trajectory.policy, r.task.as_str());
            if matches!(k.0, PolicyKind::Baymoth | PolicyKind::OracleGated) && !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (policy, set) in keys {
            let usage = source_usage(
                runs.iter()
                    .filter(|r| r.trajectory.policy == policy && r.task == set)
                    .map(|r| &r.trajectory),
            );
            let Ok(usage) = usage else { continue };
            let g = gamma.to_string();
            w.write_record([policy.name(), set, &g, "none", &usage.none.to_string()])?;
            for (id, pct) in &usage.sources {
                w.write_record([policy.name(), set, &g, &id.to_string(), &pct.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Mean regret curves with ±1 std bands, one series per curve.
pub fn regret_svg(title: &str, curves: &[&AggregateCurve], setting_label: Option<&str>) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 36.0, 48.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let steps = curves.iter().map(|c| c.mean.len()).max().unwrap_or(1).max(2);
    let ymax = curves
        .iter()
        .flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m + s))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let sx = |t: usize| left + pw * t as f64 / (steps - 1) as f64;
    let sy = |v: f64| top + ph * (1.0 - (v / ymax).clamp(0.0, 1.0));

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        left + pw / 2.0,
        escape(title)
    ));
    out.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>\n",
            left - 6.0,
            sy(v) + 4.0
        ));
    }
    for t in 0..steps {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            sx(t),
            top + ph + 16.0,
            t + 1
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>\n",
        left + pw / 2.0,
        h - 10.0
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">simple regret</text>\n",
        top + ph / 2.0,
        top + ph / 2.0
    ));
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = c
            .mean
            .iter()
            .zip(&c.std)
            .enumerate()
            .map(|(t, (m, s))| format!("{:.2},{:.2}", sx(t), sy(m + s)))
            .collect();
        let lower: Vec<String> = c
            .mean
            .iter()
            .zip(&c.std)
            .enumerate()
            .rev()
            .map(|(t, (m, s))| format!("{:.2},{:.2}", sx(t), sy((m - s).max(0.0))))
            .collect();
        out.push_str(&format!(
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            upper.join(" "),
            lower.join(" ")
        ));
        let line: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(t, m)| format!("{:.2},{:.2}", sx(t), sy(*m)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            line.join(" ")
        ));
        let mut label = c.policy.to_string();
        if let (Some(name), Some(v)) = (setting_label, c.setting) {
            label.push_str(&format!(" {name}={v}"));
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            left + pw + 10.0,
            left + pw + 30.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            left + pw + 36.0,
            ly + 4.0,
            escape(&label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// File-name-safe version of a task-set name.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_series_per_curve() {
        let c = AggregateCurve {
            policy: PolicyKind::Random,
            task_set: "s".into(),
            setting: None,
            mean: vec![0.5, 0.3, 0.1],
            std: vec![0.1, 0.1, 0.05],
            n_runs: 4,
            n_failed: 0,
        };
        let svg = regret_svg("a<b", &[&c, &c], None);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn slugs_are_safe() {
        assert_eq!(slug("high-d2 s/0"), "high-d2_s_0");
    }
}
