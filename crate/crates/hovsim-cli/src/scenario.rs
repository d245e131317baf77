//! Scenario and measurement files.
//!
//! Scenarios are TOML, human-editable, with links, nodes, and classes
//! referenced by name. Per-lane quantities (capacity, jam density, starting
//! densities) scale by the lane count on load; demand flows are whole-link.
//! Loading resolves names, converts units, applies defaults, and validates;
//! a scenario that loads cleanly is ready to simulate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use hovsim_core::calib::OfframpTarget;
use hovsim_core::net::{
    AccessMode, ClassId, ClassKind, DemandEntry, DemandProfile, FundamentalDiagram, LaneGroup,
    Link, LinkId, LinkRole, Network, Node, NodeId, KnownSplit, Restriction, Severity,
    VehicleClass,
};
use hovsim_core::sim::{validate_scenario, GateShares, OfframpSplitSeries, Scenario};
use serde::{Deserialize, Serialize};

/// Recommended ceiling for the friction coefficient; larger values load
/// fine but draw a warning.
pub const FRICTION_GUIDANCE: f64 = 0.4;

/// Default demand/measurement interval: five minutes.
pub const DEFAULT_INTERVAL_MINUTES: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Resolve { path: String, message: String },
    #[error("{path}: scenario fails validation\n{details}")]
    Invalid { path: String, details: String },
}

fn resolve_err(path: &str, message: String) -> LoadError {
    LoadError::Resolve { path: path.into(), message }
}

// ---------------------------------------------------------------- schema --

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub corridor: CorridorSection,
    #[serde(rename = "class")]
    pub classes: Vec<ClassSection>,
    #[serde(rename = "link")]
    pub links: Vec<LinkSection>,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeSection>,
    pub demand: DemandSection,
    #[serde(rename = "offramp_split", default, skip_serializing_if = "Vec::is_empty")]
    pub offramp_splits: Vec<SplitSection>,
    #[serde(rename = "gate_share", default, skip_serializing_if = "Vec::is_empty")]
    pub gate_shares: Vec<GateShareSection>,
    #[serde(rename = "initial_density", default, skip_serializing_if = "Vec::is_empty")]
    pub initial_densities: Vec<InitialSection>,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub access: AccessField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessField {
    Full,
    Gated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub name: String,
    pub kind: ClassKindField,
    /// Offramp link name; destination classes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKindField {
    General,
    Eligible,
    Destination,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "is_default_role")]
    pub role: RoleField,
    #[serde(default, skip_serializing_if = "is_default_group")]
    pub group: GroupField,
    /// Miles.
    pub length: f64,
    #[serde(default = "one_lane", skip_serializing_if = "is_one")]
    pub lanes: u32,
    /// Per-lane diagram; capacity and jam density scale by `lanes`.
    pub fd: FdSection,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub friction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp_partner: Option<String>,
}

fn one_lane() -> u32 {
    1
}
fn is_one(x: &u32) -> bool {
    *x == 1
}
fn is_zero(x: &f64) -> bool {
    *x == 0.0
}
fn is_default_role(r: &RoleField) -> bool {
    *r == RoleField::Ordinary
}
fn is_default_group(g: &GroupField) -> bool {
    *g == GroupField::Gp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleField {
    #[default]
    Ordinary,
    Origin,
    Destination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupField {
    #[default]
    Gp,
    Managed,
    Onramp,
    Offramp,
    Auxiliary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSection {
    /// veh/h per lane.
    pub capacity: f64,
    /// mph.
    pub free_flow: f64,
    /// mph.
    pub wave: f64,
    /// veh/mi per lane.
    pub jam_density: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Merge priorities per input; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priorities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gate: bool,
    #[serde(rename = "known_split", default, skip_serializing_if = "Vec::is_empty")]
    pub known_splits: Vec<KnownSplitSection>,
    #[serde(rename = "restriction", default, skip_serializing_if = "Vec::is_empty")]
    pub restrictions: Vec<RestrictionSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownSplitSection {
    pub input: String,
    pub output: String,
    pub class: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionSection {
    pub input: String,
    pub restricting: String,
    pub restricted: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    #[serde(default = "default_interval")]
    pub interval_minutes: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub eligible_fraction: f64,
    #[serde(rename = "entry")]
    pub entries: Vec<DemandEntrySection>,
}

fn default_interval() -> f64 {
    DEFAULT_INTERVAL_MINUTES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandEntrySection {
    pub origin: String,
    /// Explicit class; aggregate demand split by `eligible_fraction` when
    /// omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    /// veh/h per interval.
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub offramp: String,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateShareSection {
    pub gate: String,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub link: String,
    /// veh/mi per lane, one value per class in declaration order.
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub dt_seconds: f64,
    pub steps: usize,
}

// ------------------------------------------------------------- measured --

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsFile {
    #[serde(default = "default_interval")]
    pub interval_minutes: f64,
    #[serde(rename = "offramp")]
    pub offramps: Vec<TargetSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub name: String,
    /// Measured exit flows, veh/h per interval.
    pub flows: Vec<f64>,
    /// Relative flow-match tolerance; the calibrate command's --tol value
    /// applies when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

// -------------------------------------------------------------- loading --

#[derive(Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub file: ScenarioFile,
    pub warnings: Vec<String>,
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, LoadError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| LoadError::Io { path: shown.clone(), source })?;
    parse_scenario(&text, &shown)
}

pub fn parse_scenario(text: &str, path: &str) -> Result<LoadedScenario, LoadError> {
    let file: ScenarioFile = toml::from_str(text)
        .map_err(|e| LoadError::Parse { path: path.into(), message: e.to_string() })?;
    let (scenario, warnings) = resolve(&file, path)?;
    Ok(LoadedScenario { scenario, file, warnings })
}

/// Serialize a scenario file; loading the result reproduces the same
/// in-memory value, and saving again reproduces the same bytes.
pub fn save_scenario(file: &ScenarioFile) -> String {
    toml::to_string_pretty(file).expect("scenario files serialize")
}

pub fn load_targets(
    path: &Path,
    net: &Network,
    interval_hours: f64,
) -> Result<Vec<OfframpTarget>, LoadError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| LoadError::Io { path: shown.clone(), source })?;
    parse_targets(&text, &shown, net, interval_hours)
}

pub fn parse_targets(
    text: &str,
    path: &str,
    net: &Network,
    interval_hours: f64,
) -> Result<Vec<OfframpTarget>, LoadError> {
    let file: TargetsFile = toml::from_str(text)
        .map_err(|e| LoadError::Parse { path: path.into(), message: e.to_string() })?;
    let hours = file.interval_minutes / 60.0;
    if (hours - interval_hours).abs() > 1e-12 * interval_hours.max(1.0) {
        return Err(resolve_err(
            path,
            format!(
                "measurement interval ({} min) must match the demand interval ({} min)",
                file.interval_minutes,
                interval_hours * 60.0
            ),
        ));
    }
    let mut seen = BTreeSet::new();
    let mut targets = Vec::with_capacity(file.offramps.len());
    for t in &file.offramps {
        let link = link_by_name(net, &t.name)
            .ok_or_else(|| resolve_err(path, format!("offramp '{}' is not a link", t.name)))?;
        if !seen.insert(t.name.clone()) {
            return Err(resolve_err(path, format!("offramp '{}' measured twice", t.name)));
        }
        if t.flows.is_empty() {
            return Err(resolve_err(path, format!("offramp '{}' has no measurements", t.name)));
        }
        if let Some(f) = t.flows.iter().find(|f| !f.is_finite() || **f < 0.0) {
            return Err(resolve_err(
                path,
                format!("offramp '{}': measured flow {f} out of range", t.name),
            ));
        }
        targets.push(OfframpTarget { offramp: link, flows: t.flows.clone(), tolerance: t.tolerance });
    }
    Ok(targets)
}

pub fn link_by_name(net: &Network, name: &str) -> Option<LinkId> {
    net.links.iter().position(|l| l.name == name).map(LinkId)
}

/// Names appear in comma-separated exports, so keep them to a safe
/// identifier alphabet.
fn check_name(path: &str, what: &str, name: &str) -> Result<(), LoadError> {
    let ok = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(resolve_err(
            path,
            format!("{what} name '{name}' must use only letters, digits, '_', '-', '.'"),
        ))
    }
}

fn unique_names<'a, I: Iterator<Item = &'a str>>(
    path: &str,
    what: &str,
    names: I,
) -> Result<BTreeMap<String, usize>, LoadError> {
    let mut map = BTreeMap::new();
    for (i, n) in names.enumerate() {
        check_name(path, what, n)?;
        if map.insert(n.to_string(), i).is_some() {
            return Err(resolve_err(path, format!("duplicate {what} name '{n}'")));
        }
    }
    Ok(map)
}

fn resolve(file: &ScenarioFile, path: &str) -> Result<(Scenario, Vec<String>), LoadError> {
    let link_ids = unique_names(path, "link", file.links.iter().map(|l| l.name.as_str()))?;
    let node_ids = unique_names(path, "node", file.nodes.iter().map(|n| n.name.as_str()))?;
    let class_ids = unique_names(path, "class", file.classes.iter().map(|c| c.name.as_str()))?;

    let link = |name: &str, ctx: &str| -> Result<LinkId, LoadError> {
        link_ids
            .get(name)
            .map(|&i| LinkId(i))
            .ok_or_else(|| resolve_err(path, format!("{ctx}: unknown link '{name}'")))
    };
    let class = |name: &str, ctx: &str| -> Result<ClassId, LoadError> {
        class_ids
            .get(name)
            .map(|&i| ClassId(i))
            .ok_or_else(|| resolve_err(path, format!("{ctx}: unknown class '{name}'")))
    };

    let mut classes = Vec::with_capacity(file.classes.len());
    for c in &file.classes {
        let kind = match (c.kind, &c.destination) {
            (ClassKindField::General, None) => ClassKind::GpOnly,
            (ClassKindField::Eligible, None) => ClassKind::Eligible,
            (ClassKindField::Destination, Some(dest)) => {
                ClassKind::Destination(link(dest, &format!("class '{}'", c.name))?)
            }
            (ClassKindField::Destination, None) => {
                return Err(resolve_err(
                    path,
                    format!("class '{}': destination classes need a destination link", c.name),
                ));
            }
            (_, Some(_)) => {
                return Err(resolve_err(
                    path,
                    format!("class '{}': only destination classes take a destination", c.name),
                ));
            }
        };
        classes.push(VehicleClass { name: c.name.clone(), kind });
    }

    let mut warnings = Vec::new();
    let mut links = Vec::with_capacity(file.links.len());
    for l in &file.links {
        if l.lanes == 0 {
            return Err(resolve_err(path, format!("link '{}': needs at least one lane", l.name)));
        }
        if l.friction > FRICTION_GUIDANCE {
            warnings.push(format!(
                "link '{}': friction {} above the recommended ceiling {FRICTION_GUIDANCE}",
                l.name, l.friction
            ));
        }
        let lanes = l.lanes as f64;
        links.push(Link {
            name: l.name.clone(),
            role: match l.role {
                RoleField::Ordinary => LinkRole::Ordinary,
                RoleField::Origin => LinkRole::Origin,
                RoleField::Destination => LinkRole::Destination,
            },
            lane_group: match l.group {
                GroupField::Gp => LaneGroup::Gp,
                GroupField::Managed => LaneGroup::Managed,
                GroupField::Onramp => LaneGroup::Onramp,
                GroupField::Offramp => LaneGroup::Offramp,
                GroupField::Auxiliary => LaneGroup::Auxiliary,
            },
            length: l.length,
            lanes: l.lanes,
            fd: FundamentalDiagram {
                capacity: l.fd.capacity * lanes,
                free_flow: l.fd.free_flow,
                wave: l.fd.wave,
                jam_density: l.fd.jam_density * lanes,
            },
            friction: l.friction,
            gp_partner: match &l.gp_partner {
                Some(p) => Some(link(p, &format!("link '{}'", l.name))?),
                None => None,
            },
        });
    }

    let mut nodes = Vec::with_capacity(file.nodes.len());
    for n in &file.nodes {
        let ctx = format!("node '{}'", n.name);
        let inputs = n
            .inputs
            .iter()
            .map(|s| link(s, &ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let outputs = n
            .outputs
            .iter()
            .map(|s| link(s, &ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let priorities = match &n.priorities {
            Some(p) => p.clone(),
            None => vec![1.0 / inputs.len().max(1) as f64; inputs.len()],
        };
        let known_splits = n
            .known_splits
            .iter()
            .map(|k| {
                Ok(KnownSplit {
                    input: link(&k.input, &ctx)?,
                    output: link(&k.output, &ctx)?,
                    class: class(&k.class, &ctx)?,
                    value: k.value,
                })
            })
            .collect::<Result<Vec<_>, LoadError>>()?;
        let restrictions = n
            .restrictions
            .iter()
            .map(|r| {
                Ok(Restriction {
                    input: link(&r.input, &ctx)?,
                    restricting: link(&r.restricting, &ctx)?,
                    restricted: link(&r.restricted, &ctx)?,
                    coefficient: r.coefficient,
                })
            })
            .collect::<Result<Vec<_>, LoadError>>()?;
        nodes.push(Node {
            name: n.name.clone(),
            inputs,
            outputs,
            priorities,
            is_gate: n.gate,
            known_splits,
            restrictions,
        });
    }

    let net = Network {
        access: match file.corridor.access {
            AccessField::Full => AccessMode::Full,
            AccessField::Gated => AccessMode::Gated,
        },
        classes,
        links,
        nodes,
    };

    // Aggregate demand entries split between the first general and first
    // eligible class; explicit entries pass through.
    let ef = file.demand.eligible_fraction;
    let general = net.classes.iter().position(|c| c.kind == ClassKind::GpOnly);
    let eligible = net.classes.iter().position(|c| c.kind == ClassKind::Eligible);
    let mut entries = Vec::new();
    for e in &file.demand.entries {
        let ctx = format!("demand at '{}'", e.origin);
        let origin = link(&e.origin, &ctx)?;
        match &e.class {
            Some(name) => {
                entries.push(DemandEntry { origin, class: class(name, &ctx)?, flows: e.flows.clone() });
            }
            None => {
                let Some(g) = general else {
                    return Err(resolve_err(
                        path,
                        format!("{ctx}: aggregate demand needs a general class"),
                    ));
                };
                if ef > 0.0 {
                    let Some(el) = eligible else {
                        return Err(resolve_err(
                            path,
                            format!("{ctx}: eligible_fraction set but no eligible class exists"),
                        ));
                    };
                    entries.push(DemandEntry {
                        origin,
                        class: ClassId(g),
                        flows: e.flows.iter().map(|f| f * (1.0 - ef)).collect(),
                    });
                    entries.push(DemandEntry {
                        origin,
                        class: ClassId(el),
                        flows: e.flows.iter().map(|f| f * ef).collect(),
                    });
                } else {
                    entries.push(DemandEntry { origin, class: ClassId(g), flows: e.flows.clone() });
                }
            }
        }
    }

    let offramp_splits = file
        .offramp_splits
        .iter()
        .map(|s| {
            Ok(OfframpSplitSeries {
                offramp: link(&s.offramp, "offramp_split")?,
                betas: s.betas.clone(),
            })
        })
        .collect::<Result<Vec<_>, LoadError>>()?;

    let gate_shares = file
        .gate_shares
        .iter()
        .map(|g| {
            let node = node_ids
                .get(&g.gate)
                .map(|&i| NodeId(i))
                .ok_or_else(|| resolve_err(path, format!("gate_share: unknown node '{}'", g.gate)))?;
            Ok(GateShares { gate: node, shares: g.shares.clone() })
        })
        .collect::<Result<Vec<_>, LoadError>>()?;

    let initial_densities = if file.initial_densities.is_empty() {
        Vec::new()
    } else {
        let mut grid = vec![vec![0.0; net.classes.len()]; net.links.len()];
        for d in &file.initial_densities {
            let id = link(&d.link, "initial_density")?;
            if d.densities.len() != net.classes.len() {
                return Err(resolve_err(
                    path,
                    format!(
                        "initial_density '{}': {} values for {} classes",
                        d.link,
                        d.densities.len(),
                        net.classes.len()
                    ),
                ));
            }
            let lanes = net.links[id.0].lanes as f64;
            grid[id.0] = d.densities.iter().map(|x| x * lanes).collect();
        }
        grid
    };

    let scenario = Scenario {
        net,
        demand: DemandProfile {
            interval_hours: file.demand.interval_minutes / 60.0,
            eligible_fraction: ef,
            entries,
        },
        dt_hours: file.run.dt_seconds / 3600.0,
        steps: file.run.steps,
        initial_densities,
        offramp_splits,
        gate_shares,
    };

    let report = validate_scenario(&scenario);
    for v in &report.violations {
        if v.severity == Severity::Warning {
            warnings.push(format!("{}: {}", v.code, v.message));
        }
    }
    if report.has_errors() {
        let details: Vec<String> = report
            .violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
            .map(|v| format!("  {}: {}", v.code, v.message))
            .collect();
        return Err(LoadError::Invalid { path: path.into(), details: details.join("\n") });
    }

    Ok((scenario, warnings))
}
