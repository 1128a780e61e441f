use std::fmt::Write as _;
use std::path::Path;

use probplan::persist::{read_file, write_atomic};
use probplan::scenario::{load_scenario, ScenarioSpec};
use probplan::sim::{parse_replay, TickRecord};
use probplan::{Error, PolylineKind, Result, Vec2};
use serde_json::json;

const MARGIN: f64 = 10.0;
const PX_PER_M: f64 = 4.0;

/// Writes `<stem>.svg` and `<stem>.csv` for a replay into `out`.
pub fn replay_export(replay: &Path, scenario: Option<&Path>, out: &Path) -> Result<()> {
    let bytes = read_file(replay)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", replay.display())))?;
    let ticks = parse_replay(text)?;
    if ticks.is_empty() {
        return Err(Error::Validation(format!("{} has no ticks", replay.display())));
    }
    let spec = scenario.map(load_scenario).transpose()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stem = replay
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "replay".into());
    let svg_path = out.join(format!("{stem}.svg"));
    let csv_path = out.join(format!("{stem}.csv"));
    write_atomic(&svg_path, render_svg(&ticks, spec.as_ref()).as_bytes())?;
    write_atomic(&csv_path, render_csv(&ticks).as_bytes())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "command": "replay-export",
            "ticks": ticks.len(),
            "svg": svg_path,
            "csv": csv_path,
        }))
        .expect("summary serializes")
    );
    Ok(())
}

pub fn render_csv(ticks: &[TickRecord]) -> String {
    let mut s = String::from("t,x,y,heading,speed,steer,throttle,brake,argmax_index,plan_conflicts,events\n");
    for r in ticks {
        let events: Vec<&str> = r.events.iter().map(|e| e.kind.name()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.ego_pose.position.x,
            r.ego_pose.position.y,
            r.ego_pose.heading,
            r.speed,
            r.control.steer,
            r.control.throttle,
            r.control.brake,
            r.argmax_index.map(|i| i.to_string()).unwrap_or_default(),
            r.plan_conflicts.map(|c| c.to_string()).unwrap_or_default(),
            events.join(";"),
        );
    }
    s
}

struct Bounds {
    min: Vec2,
    max: Vec2,
}

impl Bounds {
    fn new() -> Self {
        Self {
            min: Vec2::new(f64::INFINITY, f64::INFINITY),
            max: Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn add(&mut self, p: Vec2) {
        self.min = Vec2::new(self.min.x.min(p.x), self.min.y.min(p.y));
        self.max = Vec2::new(self.max.x.max(p.x), self.max.y.max(p.y));
    }

    /// World to pixel coordinates, y up.
    fn px(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.min.x + MARGIN) * PX_PER_M,
            (self.max.y - p.y + MARGIN) * PX_PER_M,
        )
    }

    fn size(&self) -> (f64, f64) {
        (
            (self.max.x - self.min.x + 2.0 * MARGIN) * PX_PER_M,
            (self.max.y - self.min.y + 2.0 * MARGIN) * PX_PER_M,
        )
    }
}

fn path_d(b: &Bounds, pts: impl IntoIterator<Item = Vec2>) -> String {
    let mut d = String::new();
    for (i, p) in pts.into_iter().enumerate() {
        let (x, y) = b.px(p);
        let _ = write!(d, "{}{x:.1},{y:.1} ", if i == 0 { "M" } else { "L" });
    }
    d
}

pub fn render_svg(ticks: &[TickRecord], spec: Option<&ScenarioSpec>) -> String {
    let mut b = Bounds::new();
    for r in ticks {
        b.add(r.ego_pose.position);
        for a in &r.agents {
            b.add(a.pose.position);
        }
    }
    if let Some(spec) = spec {
        spec.map.iter().flat_map(|l| l.points.iter()).for_each(|&p| b.add(p));
    }
    let (w, h) = b.size();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#f8f8f8"/>"##);
    if let Some(spec) = spec {
        for line in &spec.map {
            let (stroke, dash) = match line.kind {
                PolylineKind::RoadBoundary => ("#333", ""),
                PolylineKind::LaneDivider => ("#999", r#" stroke-dasharray="8 6""#),
                PolylineKind::LaneCenterline => ("#ccc", r#" stroke-dasharray="2 6""#),
                PolylineKind::PedestrianCrossing => ("#c9a", ""),
            };
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{stroke}" stroke-width="2"{dash}/>"#,
                path_d(&b, line.points.iter().copied())
            );
        }
        let _ = writeln!(
            s,
            r##"<path d="{}" fill="none" stroke="#6a6" stroke-width="1"/>"##,
            path_d(&b, spec.route.iter().copied())
        );
    }

    let mut agent_ids: Vec<usize> = ticks.iter().flat_map(|r| r.agents.iter().map(|a| a.id)).collect();
    agent_ids.sort_unstable();
    agent_ids.dedup();
    for id in agent_ids {
        let pts = ticks
            .iter()
            .filter_map(|r| r.agents.iter().find(|a| a.id == id))
            .map(|a| a.pose.position);
        let _ = writeln!(
            s,
            r##"<path d="{}" fill="none" stroke="#d80" stroke-width="1.5"/>"##,
            path_d(&b, pts)
        );
    }

    for r in ticks {
        if let Some(plan) = &r.plan {
            let color = if r.plan_conflicts == Some(true) { "#d22" } else { "#48c" };
            let pts = std::iter::once(r.ego_pose.position).chain(plan.iter().map(|&p| r.ego_pose.to_world(p)));
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1" stroke-opacity="0.5"/>"#,
                path_d(&b, pts)
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#124" stroke-width="2.5"/>"##,
        path_d(&b, ticks.iter().map(|r| r.ego_pose.position))
    );
    for r in ticks {
        for e in &r.events {
            let (x, y) = b.px(r.ego_pose.position);
            let _ = writeln!(
                s,
                r##"<circle cx="{x:.1}" cy="{y:.1}" r="6" fill="none" stroke="#e00" stroke-width="2"><title>{} at t={:.2}</title></circle>"##,
                e.kind.name(),
                r.t
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
