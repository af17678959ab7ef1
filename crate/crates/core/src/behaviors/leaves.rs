use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::ladder::ladder_step;
use super::localiser::{Localiser, SensorSlot};
use super::tree::{binding_prefix, find_def, index_tree, subtree_name};
use crate::bt::{BbValue, Blackboard, LeafRegistry, NodeStatus, TickCtx};
use crate::error::LeafError;
use crate::estimation::{history_gate, AlignmentResult, FilterMode, GateBound, Health};
use crate::mapdb::GpsQuality;
use crate::pipeline::{BlackboardPublisher, FilterId, SensorKind, UpdateOutcome, UpdateStats};
use crate::types::{wrap_angle, Covariance3, GpsFix, MeasurementPayload, Pose2D};

/// Blackboard topics written by the run driver.
pub mod topics {
    /// Latest GPS measurement (fix or no-fix).
    pub const GPS_FIX: &str = "gps/fix";
    /// Every lidar alignment result, converged or not.
    pub const LIDAR_ALIGNMENT: &str = "lidar/alignment";
    /// Operator commands: `reset <x> <y> <heading_deg>` or `reinit`.
    pub const CONTROL: &str = "control";
}

type Ctx<'a, 'b> = TickCtx<'a, Localiser>;
type LeafResult = Result<NodeStatus, LeafError>;

const CONSISTENCY_SIGMA: f64 = 3.0;

fn gps_consistent(main: &crate::estimation::FilterState, fix: &GpsFix) -> bool {
    let p = main.cov.matrix();
    let s: Matrix2<f64> = p.fixed_view::<2, 2>(0, 0).into_owned() + fix.cov_matrix();
    let nu = fix.position_vec() - Vector2::new(main.pose.x, main.pose.y);
    s.try_inverse()
        .is_some_and(|si| (nu.transpose() * si * nu)[(0, 0)].sqrt() <= CONSISTENCY_SIGMA)
}

fn alignment_consistent(state: &crate::estimation::FilterState, r: &Matrix3<f64>, a: &AlignmentResult) -> bool {
    let s = state.cov.matrix() + r;
    let nu = Vector3::new(
        a.pose.x - state.pose.x,
        a.pose.y - state.pose.y,
        wrap_angle(a.pose.heading - state.pose.heading),
    );
    s.try_inverse()
        .is_some_and(|si| (nu.transpose() * si * nu)[(0, 0)].sqrt() <= CONSISTENCY_SIGMA)
}

fn main_position(w: &Localiser) -> (f64, f64) {
    let p = w.state(FilterId::Main).pose;
    (p.x, p.y)
}

fn gps_init(ctx: &mut Ctx, f: FilterId, wait: bool) -> LeafResult {
    let not_ready = Ok(if wait { NodeStatus::Running } else { NodeStatus::Failure });
    let w = &mut *ctx.world;
    let bb: &Blackboard = ctx.blackboard;
    if w.sensor_connected(SensorKind::Gps, f) {
        return Ok(NodeStatus::Success);
    }
    let now = w.now;
    let fresh = bb.get(topics::GPS_FIX).and_then(BbValue::as_measurement).is_some_and(|m| {
        matches!(&m.payload, MeasurementPayload::GpsFix(fix) if fix.has_fix())
            && now.secs_since(m.timestamp) <= w.cfg.gps_fresh_secs
    });
    if w.map.query_gps_model(main_position(w)) == GpsQuality::Unavailable {
        return not_ready;
    }
    if f == FilterId::Main {
        let main = *w.state(FilterId::Main);
        let tick = ctx.tick_index;
        let slot = w.slot_mut(SensorKind::Gps, f);
        // the run must be unbroken: a tick without evaluation restarts it
        if slot.counted_tick.is_none_or(|t| t + 1 < tick) {
            slot.consistent_fixes = 0;
        }
        slot.counted_tick = Some(tick);
        for m in bb.batch(topics::GPS_FIX).iter().filter_map(BbValue::as_measurement) {
            if let MeasurementPayload::GpsFix(fix) = &m.payload {
                if fix.has_fix() && gps_consistent(&main, fix) {
                    slot.consistent_fixes += 1;
                } else {
                    slot.consistent_fixes = 0;
                }
            }
        }
        if slot.consistent_fixes < w.cfg.gps_consistency_fixes {
            return not_ready;
        }
    }
    if !fresh {
        return not_ready;
    }
    Ok(NodeStatus::Success)
}

fn lidar_init(ctx: &mut Ctx, f: FilterId, wait: bool) -> LeafResult {
    let not_ready = Ok(if wait { NodeStatus::Running } else { NodeStatus::Failure });
    let w = &*ctx.world;
    if w.sensor_connected(SensorKind::Lidar, f) {
        return Ok(NodeStatus::Success);
    }
    let kernel = w.kernel(f);
    let r = kernel.config().lidar_noise.r();
    let tol = kernel.config().history_tolerance_deg.to_radians();
    let ok = ctx
        .blackboard
        .batch(topics::LIDAR_ALIGNMENT)
        .iter()
        .filter_map(BbValue::as_alignment)
        .any(|a| {
            a.converged
                && alignment_consistent(&kernel.state, &r, a)
                && history_gate(a.pose.heading, &w.map.query_lidar_history((a.pose.x, a.pose.y)), tol)
        });
    if ok {
        Ok(NodeStatus::Success)
    } else {
        not_ready
    }
}

fn connect(ctx: &mut Ctx, s: SensorKind, f: FilterId) -> LeafResult {
    let w = &mut *ctx.world;
    if w.sensor_connected(s, f) {
        return Ok(NodeStatus::Success);
    }
    w.connect_sensor(s, f);
    let now = w.now;
    *w.slot_mut(s, f) = SensorSlot {
        connected_at: Some(now),
        ..SensorSlot::default()
    };
    w.kernel_mut(f).bound = GateBound::TwoSigma;
    if f == FilterId::Main {
        w.set_main_mode(match s {
            SensorKind::Gps => FilterMode::GpsDr,
            SensorKind::Lidar => FilterMode::LidarDr,
        });
    }
    log::info!("connected {} at {now}", binding_prefix(s, f));
    Ok(NodeStatus::Success)
}

/// Advances the ladder once per tick and returns (failed, level).
fn evaluate(ctx: &mut Ctx, s: SensorKind, f: FilterId) -> (bool, usize) {
    let tick = ctx.tick_index;
    let w = &mut *ctx.world;
    let slot = w.slot_mut(s, f);
    if slot.ladder.evaluated_tick == Some(tick) {
        return (slot.failed, slot.ladder.level);
    }
    let batch: Vec<UpdateStats> = ctx
        .blackboard
        .batch(&BlackboardPublisher::stats_topic(f))
        .iter()
        .filter_map(BbValue::as_stats)
        .filter(|st| st.sensor == s && st.filter == f)
        .cloned()
        .collect();
    let hold = s == SensorKind::Gps
        && w.cfg.hold_ladder_in_noisy
        && w.map.query_gps_model(main_position(w)) == GpsQuality::Noisy;
    let rules = w.cfg.ladder_rules();
    let (now, stale_secs) = (w.now, w.cfg.stale_secs);
    let slot = w.slot_mut(s, f);
    let step = ladder_step(&mut slot.ladder, &batch, &rules, hold);
    let since = [slot.ladder.last_accept, slot.connected_at, slot.ladder.moved_at]
        .into_iter()
        .flatten()
        .max();
    let stale = since.is_some_and(|t| now.secs_since(t) > stale_secs);
    // a filter that was already LOST when the sensor connected gets the
    // stale window to recover; LOST only counts once an update has landed
    let proven = slot.ladder.last_accept.is_some();
    let level = slot.ladder.level;
    if let Some(norm) = step.entered_all {
        // widen the prior so the first unconditional update is not over-trusted
        let c = &mut w.kernel_mut(f).state.cov.0;
        c[(0, 0)] += norm * norm;
        c[(1, 1)] += norm * norm;
    }
    let failed = stale || (w.health(f) == Health::Lost && proven);
    let slot = w.slot_mut(s, f);
    slot.failed = failed;
    slot.ladder.evaluated_tick = Some(tick);
    (failed, level)
}

fn localising(ctx: &mut Ctx, s: SensorKind, f: FilterId, k: usize) -> LeafResult {
    let (failed, level) = evaluate(ctx, s, f);
    Ok(if failed || level > k {
        NodeStatus::Failure
    } else {
        NodeStatus::Running
    })
}

fn topic_listeners(ctx: &mut Ctx) -> LeafResult {
    let w = &mut *ctx.world;
    let now = w.now;
    for f in [FilterId::Main, FilterId::Backup] {
        w.kernel_mut(f).assess_health(now);
    }
    if w.state(FilterId::Backup).is_initialized() {
        let mode = if w.sensor_connected(SensorKind::Gps, FilterId::Backup) {
            FilterMode::GpsDr
        } else if w.sensor_connected(SensorKind::Lidar, FilterId::Backup) {
            FilterMode::LidarDr
        } else {
            FilterMode::DrOnly
        };
        w.kernel_mut(FilterId::Backup).state.mode = mode;
    }
    if let Some(i) = w.pending_jump {
        let want = match w.events[i].to_mode {
            FilterMode::GpsDr => Some(SensorKind::Gps),
            FilterMode::LidarDr => Some(SensorKind::Lidar),
            _ => None,
        };
        let first = ctx
            .blackboard
            .batch(&BlackboardPublisher::stats_topic(FilterId::Main))
            .iter()
            .filter_map(BbValue::as_stats)
            .find(|st| Some(st.sensor) == want && st.outcome == UpdateOutcome::Accepted);
        if let Some(st) = first {
            w.events[i].jump_distance = st.correction.unwrap_or(0.0);
            w.pending_jump = None;
        }
    }
    Ok(NodeStatus::Success)
}

const GPS_SUBTREES: [(SensorKind, FilterId); 2] = [(SensorKind::Gps, FilterId::Backup), (SensorKind::Gps, FilterId::Main)];

/// Prunes the GPS subtrees where the location model says GPS is unavailable
/// and restores them where it is not, with hysteresis.
fn gps_context_gate(ctx: &mut Ctx) -> LeafResult {
    let available = {
        let w = &*ctx.world;
        w.map.query_gps_model(main_position(w)) != GpsQuality::Unavailable
    };
    let hysteresis = ctx.world.cfg.context_hysteresis_ticks;
    let gate = &mut ctx.world.context;
    if available == gate.available {
        gate.streak = 0;
        return Ok(NodeStatus::Success);
    }
    gate.streak += 1;
    if gate.streak < hysteresis {
        return Ok(NodeStatus::Success);
    }
    gate.available = available;
    gate.streak = 0;
    log::info!("GPS context {}", if available { "available" } else { "unavailable" });
    for (s, f) in GPS_SUBTREES {
        let name = subtree_name(s, f);
        if available {
            restore(ctx, &name)?;
        } else {
            let w = &mut *ctx.world;
            if let Some(slot) = w.node_index.get(&name).copied() {
                ctx.request_prune(slot.id);
                let w = &mut *ctx.world;
                let nested = format!("{name}.");
                w.node_index.retain(|k, _| !k.starts_with(&nested));
                w.node_index.remove(&name);
                w.pruned.insert(name, slot);
            }
        }
    }
    Ok(NodeStatus::Success)
}

fn restore(ctx: &mut Ctx, name: &str) -> Result<(), LeafError> {
    let w = &mut *ctx.world;
    let Some(slot) = w.pruned.get(name).copied() else {
        return Ok(());
    };
    let (Some(reg), Some(def)) = (w.registry.clone(), w.tree_def.as_ref()) else {
        return Err(LeafError::new("tree not instantiated through the localiser"));
    };
    let def = find_def(def, name)
        .ok_or_else(|| LeafError::new(format!("no definition for `{name}`")))?
        .clone();
    let node = reg
        .instantiate(&def, &mut w.id_gen)
        .map_err(|e| LeafError::new(e.to_string()))?;
    let parent = slot.parent.ok_or_else(|| LeafError::new("cannot restore the root"))?;
    let mut index = index_tree(&node);
    if let Some(top) = index.get_mut(name) {
        top.parent = Some(parent);
        top.index = slot.index;
    }
    w.node_index.extend(index);
    w.pruned.remove(name);
    ctx.request_insert(parent, slot.index, node);
    Ok(())
}

fn parse_command(cmd: &str) -> Option<Command> {
    let mut it = cmd.split_whitespace();
    match it.next()? {
        "reset" => {
            let v: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().ok()?;
            match v[..] {
                [x, y, h] => Some(Command::Reset(Pose2D::new(x, y, wrap_angle(h.to_radians())))),
                _ => None,
            }
        }
        "reinit" => Some(Command::Reinit),
        _ => None,
    }
}

enum Command {
    Reset(Pose2D),
    Reinit,
}

fn manual_reset(ctx: &mut Ctx) -> LeafResult {
    let cmds: Vec<String> = ctx
        .blackboard
        .batch(topics::CONTROL)
        .iter()
        .filter_map(BbValue::as_text)
        .map(str::to_string)
        .collect();
    let w = &mut *ctx.world;
    let mut handled = false;
    for c in cmds {
        match parse_command(&c) {
            Some(Command::Reset(pose)) => {
                let [xx, yy, hh] = w.cfg.manual_reset_cov;
                w.reset_main(pose, Covariance3::diagonal(xx, yy, hh));
                handled = true;
            }
            Some(Command::Reinit) => {
                let b = *w.state(FilterId::Backup);
                if b.is_initialized() {
                    w.reset_main(b.pose, b.cov);
                    handled = true;
                }
            }
            None => log::warn!("ignoring control command `{c}`"),
        }
    }
    if handled {
        w.set_main_mode(FilterMode::DrOnly);
        Ok(NodeStatus::Success)
    } else {
        Ok(NodeStatus::Failure)
    }
}

/// Resets the main filter from a healthier backup whose heading disagrees.
/// Never claims the selector: the main filter keeps whatever sensor it has.
fn cross_filter_reset(ctx: &mut Ctx) -> LeafResult {
    let w = &mut *ctx.world;
    let (m, b) = (*w.state(FilterId::Main), *w.state(FilterId::Backup));
    if m.is_initialized()
        && b.is_initialized()
        && b.health > m.health
        && wrap_angle(b.pose.heading - m.pose.heading).abs() > w.cfg.cross_reset_heading_deg.to_radians()
    {
        log::info!("resetting main from backup at {}", w.now);
        w.reset_main(b.pose, b.cov);
    }
    Ok(NodeStatus::Failure)
}

/// Binds every leaf and hook used by the localiser trees.
pub fn register_leaves(reg: &mut LeafRegistry<Localiser>) {
    reg.register("topic-listeners", |c: &mut Ctx| topic_listeners(c));
    reg.register("gps-context-gate", |c: &mut Ctx| gps_context_gate(c));
    reg.register("manual-reset", |c: &mut Ctx| manual_reset(c));
    reg.register("cross-filter-reset", |c: &mut Ctx| cross_filter_reset(c));
    reg.register("dr-only", |c: &mut Ctx| {
        c.world.set_main_mode(FilterMode::DrOnly);
        Ok(NodeStatus::Running)
    });
    for s in [SensorKind::Gps, SensorKind::Lidar] {
        for f in [FilterId::Main, FilterId::Backup] {
            let b = binding_prefix(s, f);
            for wait in [false, true] {
                let name = if wait { format!("{b}.init.wait") } else { format!("{b}.init") };
                reg.register(name, move |c: &mut Ctx| match s {
                    SensorKind::Gps => gps_init(c, f, wait),
                    SensorKind::Lidar => lidar_init(c, f, wait),
                });
            }
            reg.register(format!("{b}.connect"), move |c: &mut Ctx| connect(c, s, f));
            for k in 0..3 {
                reg.register(format!("{b}.bound.{k}"), move |c: &mut Ctx| {
                    c.world.kernel_mut(f).bound = GateBound::from_rung(k);
                    Ok(NodeStatus::Success)
                });
                reg.register(format!("{b}.localising.{k}"), move |c: &mut Ctx| localising(c, s, f, k));
            }
            let label = b.clone();
            reg.register(format!("{b}.lost"), move |c: &mut Ctx| {
                log::info!("{label}: every rung failed at {}", c.world.now);
                Ok(NodeStatus::Success)
            });
            reg.register(format!("{b}.disconnect"), move |c: &mut Ctx| {
                c.world.release(s, f);
                Ok(NodeStatus::Success)
            });
            let label = b.clone();
            reg.register(format!("{b}.report-failure"), move |_c: &mut Ctx| {
                log::info!("{label} failed");
                Ok(NodeStatus::Failure)
            });
            let release = move |w: &mut Localiser| w.release(s, f);
            reg.register_hooks(format!("{b}.release"), Some(release), Some(release));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_parsing() {
        assert!(matches!(parse_command("reset 1 2 90"), Some(Command::Reset(p)) if (p.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12 && p.x == 1.0));
        assert!(matches!(parse_command("reinit"), Some(Command::Reinit)));
        assert!(parse_command("reset 1 2").is_none());
        assert!(parse_command("jump").is_none());
    }
}
