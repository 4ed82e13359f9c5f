//! Wire format of the demonstration service, version 1.
//!
//! Every frame is a JSON object carrying `"v": 1` and a `"type"`.
//!
//! Server to client:
//!
//! ```json
//! {"v":1,"type":"state","session":"s1","episode":0,"step":3,"state":[0,3],
//!  "reward":0,"done":false,"proposed":1,"agent":[0,3]}
//! {"v":1,"type":"error","session":"s1","code":"episode-done","message":"..."}
//! {"v":1,"type":"ended","session":"s1","pairs":20,"trajectories":1,
//!  "dataset":"demos/s1.demos","executed":"demos/s1.executed.demos"}
//! ```
//!
//! `proposed` (the learner's greedy action) appears only in correction
//! sessions; `agent` (row, column) only for navigation grids; `label` and
//! `executed` only on the frame answering an action.
//!
//! Client to server, over the WebSocket:
//!
//! ```json
//! {"v":1,"type":"action","session":"s1","action":"right"}
//! {"v":1,"type":"reset","session":"s1"}
//! ```
//!
//! `v` and `type` may be omitted (defaults 1 and `action`). An action is a
//! discrete index, a vector of floats for continuous spaces, or for grids
//! one of `up`, `down`, `left`, `right`, `stay`.
//!
//! Error codes: `unknown-session`, `episode-done`, `bad-action`,
//! `bad-frame`, `unsupported-version`, `internal`.

use serde::{Deserialize, Serialize};

use rlab_core::envs::{Action, NavAction};
use rlab_core::experiments::teleop::{Observation, TeleopMode};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireAction {
    Index(usize),
    Vector(Vec<f64>),
    Name(String),
}

impl From<&Action> for WireAction {
    fn from(a: &Action) -> Self {
        match a {
            Action::Discrete(i) => WireAction::Index(*i),
            Action::Continuous(v) => WireAction::Vector(v.clone()),
        }
    }
}

pub fn nav_action_name(name: &str) -> Option<NavAction> {
    match name {
        "up" => Some(NavAction::Up),
        "down" => Some(NavAction::Down),
        "left" => Some(NavAction::Left),
        "right" => Some(NavAction::Right),
        "stay" => Some(NavAction::Stay),
        _ => None,
    }
}

impl WireAction {
    /// Names are only understood on navigation grids.
    pub fn to_action(&self, grid: bool) -> Option<Action> {
        match self {
            WireAction::Index(i) => Some(Action::Discrete(*i)),
            WireAction::Vector(v) => Some(Action::Continuous(v.clone())),
            WireAction::Name(n) if grid => nav_action_name(n).map(|a| Action::Discrete(a.index())),
            WireAction::Name(_) => None,
        }
    }
}

fn v1() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    #[serde(default = "v1")]
    pub v: u32,
    pub session: String,
    pub episode: u64,
    pub step: usize,
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed: Option<WireAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<WireAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executed: Option<WireAction>,
}

impl StateFrame {
    pub fn new(session: &str, obs: &Observation, agent: Option<(usize, usize)>) -> Self {
        StateFrame {
            v: PROTOCOL_VERSION,
            session: session.to_string(),
            episode: obs.episode,
            step: obs.step,
            state: obs.state.clone(),
            reward: obs.reward,
            done: obs.done,
            proposed: obs.proposed.as_ref().map(WireAction::from),
            agent,
            label: None,
            executed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    #[serde(default = "v1")]
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub code: String,
    pub message: String,
}

impl ErrorFrame {
    pub fn new(session: Option<&str>, code: &str, message: impl Into<String>) -> Self {
        ErrorFrame {
            v: PROTOCOL_VERSION,
            session: session.map(str::to_string),
            code: code.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndedFrame {
    #[serde(default = "v1")]
    pub v: u32,
    pub session: String,
    pub pairs: usize,
    pub trajectories: usize,
    pub dataset: String,
    pub executed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerFrame {
    State(StateFrame),
    Error(ErrorFrame),
    Ended(EndedFrame),
}

impl ServerFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }
}

/// Incoming WebSocket frame before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientFrame {
    #[serde(default)]
    pub v: Option<u32>,
    #[serde(default, rename = "type")]
    pub kind: Option<String>,
    pub session: String,
    #[serde(default)]
    pub action: Option<WireAction>,
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    /// `demonstrate` (default) or `dagger-correct`.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Probability of executing the human's action in correction mode.
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    pub goal: (usize, usize),
    pub obstacles: Vec<(usize, usize)>,
}

/// Response of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub v: u32,
    pub session: String,
    pub mode: String,
    /// Discrete action count, or `null` for continuous spaces.
    pub actions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridLayout>,
    pub frame: StateFrame,
}

pub fn mode_from_name(name: Option<&str>) -> Option<TeleopMode> {
    TeleopMode::from_name(name.unwrap_or("demonstrate"))
}
