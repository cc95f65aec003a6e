//! Synthetic pixel-grid task family with a shared hidden 4-action interface.
//!
//! Every task draws a paddle on the bottom row of an `S x S` grayscale grid.
//! Agent actions `{0: NOOP, 1: FIRE, 2: RIGHT, 3: LEFT}` pass through a
//! per-task [`ActionMapping`] into the task's internal action set. One agent
//! step repeats the internal action for `frame_skip` ticks; the observation is
//! a stack of the four most recent post-skip frames.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng as _, SeedableRng};

use crate::error::{config_err, contract_err, Result};
use crate::nn::{NUM_ACTIONS, STACK};
use crate::rng::{derive_seed, domain, uniform01, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TaskKind {
    /// Catch falling pellets.
    Chase,
    /// Avoid falling rocks.
    Dodge,
    /// Return a bouncing ball.
    Volley,
    /// Shoot a marching row of invaders while avoiding their bombs.
    Swarm,
    /// Shoot descending raiders; uses a 5-action internal set.
    Raid,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [TaskKind::Chase, TaskKind::Dodge, TaskKind::Volley, TaskKind::Swarm, TaskKind::Raid];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Chase => "chase",
            TaskKind::Dodge => "dodge",
            TaskKind::Volley => "volley",
            TaskKind::Swarm => "swarm",
            TaskKind::Raid => "raid",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| config_err!("unknown task `{name}`"))
    }

    /// Agent-to-internal action table. `raid` follows the BeamRider row
    /// `(0, 1, 3, 4)`; the rest use the identity row.
    pub fn action_mapping(self) -> ActionMapping {
        match self {
            TaskKind::Raid => ActionMapping([0, 1, 3, 4]),
            _ => ActionMapping([0, 1, 2, 3]),
        }
    }

    fn internal_actions(self) -> usize {
        match self {
            TaskKind::Raid => 5,
            _ => 4,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for TaskKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskId {
    pub kind: TaskKind,
    pub seed: u64,
}

impl TaskId {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionMapping(pub [usize; NUM_ACTIONS]);

impl ActionMapping {
    /// Checks injectivity.
    pub fn new(table: [usize; NUM_ACTIONS]) -> Result<Self> {
        for i in 0..NUM_ACTIONS {
            for j in i + 1..NUM_ACTIONS {
                if table[i] == table[j] {
                    return Err(config_err!("action mapping {table:?} is not injective"));
                }
            }
        }
        Ok(Self(table))
    }
}

pub fn map_action(mapping: &ActionMapping, agent_action: usize) -> Result<usize> {
    mapping
        .0
        .get(agent_action)
        .copied()
        .ok_or_else(|| contract_err!("agent action {agent_action} outside 0..{NUM_ACTIONS}"))
}

/// Sign of the raw score delta.
pub fn clip_reward(raw: f64) -> f64 {
    if raw > 0.0 {
        1.0
    } else if raw < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvConfig {
    pub obs_size: usize,
    pub frame_skip: usize,
    pub max_episode_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { obs_size: 12, frame_skip: 4, max_episode_steps: 100 }
    }
}

impl EnvConfig {
    pub fn frame_len(&self) -> usize {
        self.obs_size * self.obs_size
    }

    pub fn obs_len(&self) -> usize {
        STACK * self.frame_len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=84).contains(&self.obs_size) {
            return Err(config_err!("obs size {} outside 8..=84", self.obs_size));
        }
        if self.frame_skip == 0 || self.max_episode_steps == 0 || self.max_episode_steps > 500 {
            return Err(config_err!("frame skip must be >= 1 and episodes 1..=500 steps"));
        }
        Ok(())
    }
}

/// The four most recent frames, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationStack {
    frame_len: usize,
    data: Vec<f64>,
}

impl ObservationStack {
    pub fn filled(frame: &[f64]) -> Self {
        let mut data = Vec::with_capacity(STACK * frame.len());
        for _ in 0..STACK {
            data.extend_from_slice(frame);
        }
        Self { frame_len: frame.len(), data }
    }

    pub fn push(&mut self, frame: &[f64]) {
        self.data.copy_within(self.frame_len.., 0);
        let start = (STACK - 1) * self.frame_len;
        self.data[start..].copy_from_slice(frame);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn newest(&self) -> &[f64] {
        &self.data[(STACK - 1) * self.frame_len..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Observation the agent acts on next (the reset stack after an
    /// auto-reset).
    pub obs: Vec<f64>,
    pub reward: f64,
    pub raw: f64,
    pub done: bool,
    pub episode_step: usize,
    /// Raw episode score when `done`.
    pub episode_score: Option<f64>,
    /// The true final stack when an auto-reset replaced it in `obs`.
    pub terminal_obs: Option<Vec<f64>>,
}

trait Game: Send {
    fn reset(&mut self, rng: &mut Rng);
    fn tick(&mut self, action: usize, rng: &mut Rng) -> f64;
    fn render(&self, frame: &mut [f64]);
    fn paddle(&self) -> usize;
}

fn rand_col(rng: &mut Rng, size: usize) -> usize {
    rng.random_range(0..size)
}

/// Shared paddle: width 3, centred on `x in 1..=size-2`, bottom row.
#[derive(Clone, Copy, Debug)]
struct Paddle {
    x: usize,
    size: usize,
}

impl Paddle {
    fn new(size: usize, rng: &mut Rng) -> Self {
        Self { x: rng.random_range(1..size - 1), size }
    }

    /// Internal actions 2/3 (or the raid-specific codes) move right/left.
    fn apply(&mut self, right: bool, left: bool) {
        if right && self.x + 2 < self.size {
            self.x += 1;
        } else if left && self.x > 1 {
            self.x -= 1;
        }
    }

    fn covers(&self, col: usize) -> bool {
        col + 1 >= self.x && col <= self.x + 1
    }

    fn draw(&self, frame: &mut [f64], level: f64) {
        let row = (self.size - 1) * self.size;
        for c in self.x - 1..=self.x + 1 {
            frame[row + c] = level;
        }
    }
}

struct Chase {
    size: usize,
    paddle: Paddle,
    pellet: (usize, usize),
    clock: u32,
}

impl Game for Chase {
    fn reset(&mut self, rng: &mut Rng) {
        self.paddle = Paddle::new(self.size, rng);
        self.pellet = (0, rand_col(rng, self.size));
        self.clock = 0;
    }

    fn tick(&mut self, action: usize, rng: &mut Rng) -> f64 {
        self.paddle.apply(action == 2, action == 3);
        self.clock += 1;
        if !self.clock.is_multiple_of(2) {
            return 0.0;
        }
        self.pellet.0 += 1;
        if self.pellet.0 < self.size - 1 {
            return 0.0;
        }
        let r = if self.paddle.covers(self.pellet.1) { 1.0 } else { -1.0 };
        self.pellet = (0, rand_col(rng, self.size));
        r
    }

    fn render(&self, frame: &mut [f64]) {
        frame.fill(0.0);
        frame[self.pellet.0 * self.size + self.pellet.1] = 1.0;
        self.paddle.draw(frame, 0.5);
    }

    fn paddle(&self) -> usize {
        self.paddle.x
    }
}

struct Dodge {
    size: usize,
    paddle: Paddle,
    rocks: [(usize, usize); 2],
    clock: u32,
}

impl Game for Dodge {
    fn reset(&mut self, rng: &mut Rng) {
        self.paddle = Paddle::new(self.size, rng);
        self.rocks = [(0, rand_col(rng, self.size)), (self.size / 2, rand_col(rng, self.size))];
        self.clock = 0;
    }

    fn tick(&mut self, action: usize, rng: &mut Rng) -> f64 {
        self.paddle.apply(action == 2, action == 3);
        self.clock += 1;
        if !self.clock.is_multiple_of(2) {
            return 0.0;
        }
        let mut r = 0.0;
        for rock in &mut self.rocks {
            rock.0 += 1;
            if rock.0 >= self.size - 1 {
                r += if self.paddle.covers(rock.1) { -1.0 } else { 1.0 };
                *rock = (0, rand_col(rng, self.size));
            }
        }
        r
    }

    fn render(&self, frame: &mut [f64]) {
        frame.fill(0.0);
        for row in 0..self.size {
            frame[row * self.size] = 0.3;
            frame[row * self.size + self.size - 1] = 0.3;
        }
        for &(r, c) in &self.rocks {
            frame[r * self.size + c] = 0.8;
        }
        self.paddle.draw(frame, 0.5);
    }

    fn paddle(&self) -> usize {
        self.paddle.x
    }
}

struct Volley {
    size: usize,
    paddle: Paddle,
    ball: (usize, usize),
    dir_right: bool,
    down: bool,
    clock: u32,
}

impl Volley {
    fn serve(&mut self, rng: &mut Rng) {
        self.ball = (0, rand_col(rng, self.size));
        self.dir_right = rng.random_bool(0.5);
        self.down = true;
    }
}

impl Game for Volley {
    fn reset(&mut self, rng: &mut Rng) {
        self.paddle = Paddle::new(self.size, rng);
        self.serve(rng);
        self.clock = 0;
    }

    fn tick(&mut self, action: usize, rng: &mut Rng) -> f64 {
        self.paddle.apply(action == 2, action == 3);
        self.clock += 1;
        if !self.clock.is_multiple_of(2) {
            return 0.0;
        }
        let last = self.size - 1;
        let (r, c) = &mut self.ball;
        if self.dir_right {
            if *c == last {
                self.dir_right = false;
                *c -= 1;
            } else {
                *c += 1;
            }
        } else if *c == 0 {
            self.dir_right = true;
            *c += 1;
        } else {
            *c -= 1;
        }
        if self.down {
            *r += 1;
        } else if *r == 0 {
            self.down = true;
            *r = 1;
        } else {
            *r -= 1;
        }
        if *r < last {
            return 0.0;
        }
        if self.paddle.covers(*c) {
            *r = last - 1;
            self.down = false;
            1.0
        } else {
            self.serve(rng);
            -1.0
        }
    }

    fn render(&self, frame: &mut [f64]) {
        frame.fill(0.2);
        frame[self.ball.0 * self.size + self.ball.1] = 1.0;
        self.paddle.draw(frame, 0.7);
    }

    fn paddle(&self) -> usize {
        self.paddle.x
    }
}

struct Swarm {
    size: usize,
    paddle: Paddle,
    invaders: [bool; 4],
    offset: usize,
    marching_right: bool,
    bullet: Option<(usize, usize)>,
    bombs: Vec<(usize, usize)>,
    clock: u32,
}

impl Swarm {
    const SPACING: usize = 3;

    fn invader_col(&self, i: usize) -> usize {
        self.offset + i * Self::SPACING
    }

    fn span(&self) -> usize {
        3 * Self::SPACING + 1
    }
}

impl Game for Swarm {
    fn reset(&mut self, rng: &mut Rng) {
        self.paddle = Paddle::new(self.size, rng);
        self.invaders = [true; 4];
        self.offset = rng.random_range(0..=self.size - self.span());
        self.marching_right = rng.random_bool(0.5);
        self.bullet = None;
        self.bombs.clear();
        self.clock = 0;
    }

    fn tick(&mut self, action: usize, rng: &mut Rng) -> f64 {
        self.paddle.apply(action == 2, action == 3);
        if action == 1 && self.bullet.is_none() {
            self.bullet = Some((self.size - 2, self.paddle.x));
        }
        self.clock += 1;
        let mut r = 0.0;
        if let Some((br, bc)) = self.bullet {
            if br == 0 {
                self.bullet = None;
            } else {
                let nr = br - 1;
                let hit = (0..4).find(|&i| self.invaders[i] && nr == 1 && self.invader_col(i) == bc);
                if let Some(i) = hit {
                    self.invaders[i] = false;
                    self.bullet = None;
                    r += 1.0;
                } else {
                    self.bullet = Some((nr, bc));
                }
            }
        }
        if self.invaders.iter().all(|a| !a) {
            self.invaders = [true; 4];
            self.offset = rng.random_range(0..=self.size - self.span());
        }
        if self.clock.is_multiple_of(4) {
            let max_off = self.size - self.span();
            if self.marching_right {
                if self.offset >= max_off {
                    self.marching_right = false;
                } else {
                    self.offset += 1;
                }
            } else if self.offset == 0 {
                self.marching_right = true;
            } else {
                self.offset -= 1;
            }
        }
        if self.bombs.len() < 2 && uniform01(rng) < 0.05 {
            let alive: Vec<usize> = (0..4).filter(|&i| self.invaders[i]).collect();
            let i = alive[rng.random_range(0..alive.len())];
            self.bombs.push((2, self.invader_col(i)));
        }
        if self.clock.is_multiple_of(2) {
            let last = self.size - 1;
            let paddle = self.paddle;
            self.bombs.retain_mut(|b| {
                b.0 += 1;
                if b.0 >= last {
                    if paddle.covers(b.1) {
                        r -= 1.0;
                    }
                    false
                } else {
                    true
                }
            });
        }
        r
    }

    fn render(&self, frame: &mut [f64]) {
        frame.fill(0.0);
        for i in 0..4 {
            if self.invaders[i] {
                frame[self.size + self.invader_col(i)] = 0.6;
            }
        }
        for &(r, c) in &self.bombs {
            frame[r * self.size + c] = 0.4;
        }
        if let Some((r, c)) = self.bullet {
            frame[r * self.size + c] = 1.0;
        }
        self.paddle.draw(frame, 0.9);
    }

    fn paddle(&self) -> usize {
        self.paddle.x
    }
}

struct Raid {
    size: usize,
    paddle: Paddle,
    enemy: (usize, usize),
    bullet: Option<(usize, usize)>,
    clock: u32,
}

impl Raid {
    fn hit(&self) -> bool {
        self.bullet == Some(self.enemy)
    }
}

impl Game for Raid {
    fn reset(&mut self, rng: &mut Rng) {
        self.paddle = Paddle::new(self.size, rng);
        self.enemy = (0, rand_col(rng, self.size));
        self.bullet = None;
        self.clock = 0;
    }

    // Internal actions: 0 NOOP, 1 FIRE, 2 UP (inert), 3 RIGHT, 4 LEFT.
    fn tick(&mut self, action: usize, rng: &mut Rng) -> f64 {
        self.paddle.apply(action == 3, action == 4);
        if action == 1 && self.bullet.is_none() {
            self.bullet = Some((self.size - 2, self.paddle.x));
        }
        self.clock += 1;
        let mut r = 0.0;
        if let Some((br, bc)) = self.bullet {
            self.bullet = if br == 0 { None } else { Some((br - 1, bc)) };
        }
        if self.hit() {
            r += 1.0;
            self.bullet = None;
            self.enemy = (0, rand_col(rng, self.size));
        }
        if self.clock.is_multiple_of(3) {
            self.enemy.0 += 1;
            if self.hit() {
                r += 1.0;
                self.bullet = None;
                self.enemy = (0, rand_col(rng, self.size));
            } else if self.enemy.0 >= self.size - 1 {
                r -= 1.0;
                self.enemy = (0, rand_col(rng, self.size));
            }
        }
        r
    }

    fn render(&self, frame: &mut [f64]) {
        frame.fill(0.0);
        for row in 0..self.size {
            for c in (0..self.size).step_by(3) {
                frame[row * self.size + c] = 0.15;
            }
        }
        frame[self.enemy.0 * self.size + self.enemy.1] = 0.7;
        if let Some((r, c)) = self.bullet {
            frame[r * self.size + c] = 1.0;
        }
        self.paddle.draw(frame, 0.85);
    }

    fn paddle(&self) -> usize {
        self.paddle.x
    }
}

fn make_game(kind: TaskKind, size: usize) -> Box<dyn Game> {
    let paddle = Paddle { x: 1, size };
    match kind {
        TaskKind::Chase => Box::new(Chase { size, paddle, pellet: (0, 0), clock: 0 }),
        TaskKind::Dodge => Box::new(Dodge { size, paddle, rocks: [(0, 0); 2], clock: 0 }),
        TaskKind::Volley => {
            Box::new(Volley { size, paddle, ball: (0, 0), dir_right: true, down: true, clock: 0 })
        }
        TaskKind::Swarm => Box::new(Swarm {
            size,
            paddle,
            invaders: [true; 4],
            offset: 0,
            marching_right: true,
            bullet: None,
            bombs: Vec::new(),
            clock: 0,
        }),
        TaskKind::Raid => Box::new(Raid { size, paddle, enemy: (0, 0), bullet: None, clock: 0 }),
    }
}

/// One procedurally generated environment.
pub struct TaskInstance {
    id: TaskId,
    config: EnvConfig,
    mapping: ActionMapping,
    game: Box<dyn Game>,
    rng: Rng,
    frame: Vec<f64>,
    stack: ObservationStack,
    episode_step: usize,
    episode_score: f64,
    terminal: bool,
    autoreset: bool,
}

pub fn generate_task(id: TaskId, config: EnvConfig) -> Result<TaskInstance> {
    config.validate()?;
    let mut game = make_game(id.kind, config.obs_size);
    let mut rng = Rng::seed_from_u64(id.seed);
    game.reset(&mut rng);
    let mut frame = vec![0.0; config.frame_len()];
    game.render(&mut frame);
    let stack = ObservationStack::filled(&frame);
    Ok(TaskInstance {
        id,
        config,
        mapping: id.kind.action_mapping(),
        game,
        rng,
        frame,
        stack,
        episode_step: 0,
        episode_score: 0.0,
        terminal: false,
        autoreset: false,
    })
}

impl TaskInstance {
    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn mapping(&self) -> ActionMapping {
        self.mapping
    }

    pub fn internal_actions(&self) -> usize {
        self.id.kind.internal_actions()
    }

    pub fn set_autoreset(&mut self, on: bool) {
        self.autoreset = on;
    }

    pub fn observation(&self) -> &[f64] {
        self.stack.as_slice()
    }

    pub fn paddle_position(&self) -> usize {
        self.game.paddle()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn reset(&mut self) -> &[f64] {
        self.game.reset(&mut self.rng);
        self.game.render(&mut self.frame);
        self.stack = ObservationStack::filled(&self.frame);
        self.episode_step = 0;
        self.episode_score = 0.0;
        self.terminal = false;
        self.stack.as_slice()
    }

    pub fn step(&mut self, agent_action: usize) -> Result<StepResult> {
        if self.terminal {
            return Err(contract_err!("step on a terminal {} episode without auto-reset", self.id.kind));
        }
        let internal = map_action(&self.mapping, agent_action)?;
        let mut raw = 0.0;
        for _ in 0..self.config.frame_skip {
            raw += self.game.tick(internal, &mut self.rng);
        }
        self.game.render(&mut self.frame);
        self.stack.push(&self.frame);
        self.episode_step += 1;
        self.episode_score += raw;
        let done = self.episode_step >= self.config.max_episode_steps;
        let episode_step = self.episode_step;
        let mut res = StepResult {
            obs: Vec::new(),
            reward: clip_reward(raw),
            raw,
            done,
            episode_step,
            episode_score: done.then_some(self.episode_score),
            terminal_obs: None,
        };
        if done && self.autoreset {
            res.terminal_obs = Some(self.stack.as_slice().to_vec());
            self.reset();
        } else if done {
            self.terminal = true;
        }
        res.obs = self.stack.as_slice().to_vec();
        Ok(res)
    }
}

/// Uniform draw from a nonempty task set.
pub fn sample_task(tasks: &[TaskId], rng: &mut Rng) -> Result<TaskId> {
    if tasks.is_empty() {
        return Err(config_err!("cannot sample from an empty task set"));
    }
    Ok(tasks[rng.random_range(0..tasks.len())])
}

/// Batched result of one synchronous step over all workers.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorStep {
    pub rewards: Vec<f64>,
    pub raw: Vec<f64>,
    pub dones: Vec<bool>,
    pub episode_scores: Vec<Option<f64>>,
    /// True successor stacks `[N, obs_len]` (terminal stacks for workers that
    /// were reset).
    pub next_obs: Vec<f64>,
}

/// `N` independent auto-resetting workers stepped in lockstep.
pub struct VectorEnv {
    workers: Vec<TaskInstance>,
    obs: Vec<f64>,
    obs_len: usize,
}

impl VectorEnv {
    pub fn new(ids: &[TaskId], config: EnvConfig) -> Result<Self> {
        if ids.is_empty() {
            return Err(config_err!("vector env needs at least one worker"));
        }
        let mut workers = Vec::with_capacity(ids.len());
        let mut obs = Vec::with_capacity(ids.len() * config.obs_len());
        for &id in ids {
            let mut w = generate_task(id, config)?;
            w.set_autoreset(true);
            obs.extend_from_slice(w.observation());
            workers.push(w);
        }
        Ok(Self { workers, obs, obs_len: config.obs_len() })
    }

    /// Workers for `kind` seeded `derive_seed(seed, [WORKER, i])`.
    pub fn for_task(kind: TaskKind, seed: u64, n: usize, config: EnvConfig) -> Result<Self> {
        let ids: Vec<TaskId> = (0..n).map(|i| TaskId::new(kind, derive_seed(seed, &[domain::WORKER, i as u64]))).collect();
        Self::new(&ids, config)
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn task(&self) -> TaskKind {
        self.workers[0].id.kind
    }

    /// Current stacked observations `[N, obs_len]`.
    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<VectorStep> {
        let n = self.workers.len();
        if actions.len() != n {
            return Err(contract_err!("{} actions for {n} workers", actions.len()));
        }
        let mut out = VectorStep {
            rewards: Vec::with_capacity(n),
            raw: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            episode_scores: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n * self.obs_len),
        };
        for (i, (w, &a)) in self.workers.iter_mut().zip(actions).enumerate() {
            let r = w.step(a)?;
            out.next_obs.extend_from_slice(r.terminal_obs.as_deref().unwrap_or(&r.obs));
            self.obs[i * self.obs_len..(i + 1) * self.obs_len].copy_from_slice(&r.obs);
            out.rewards.push(r.reward);
            out.raw.push(r.raw);
            out.dones.push(r.done);
            out.episode_scores.push(r.episode_score);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn table_rows() {
        let beam = TaskKind::Raid.action_mapping();
        assert_eq!(beam.0, [0, 1, 3, 4]);
        assert_eq!(map_action(&beam, 2).unwrap(), 3);
        let pong = TaskKind::Volley.action_mapping();
        assert_eq!(map_action(&pong, 3).unwrap(), 3);
        for k in TaskKind::ALL {
            assert_eq!(map_action(&k.action_mapping(), 0).unwrap(), 0);
            assert!(ActionMapping::new(k.action_mapping().0).is_ok());
        }
        assert!(map_action(&pong, 4).is_err());
        assert!(ActionMapping::new([0, 1, 1, 3]).is_err());
    }

    #[test]
    fn reward_clipping() {
        assert_eq!(clip_reward(3.0), 1.0);
        assert_eq!(clip_reward(0.0), 0.0);
        assert_eq!(clip_reward(-0.5), -1.0);
    }

    #[test]
    fn unknown_task_is_config_error() {
        assert!(matches!(TaskKind::from_name("pong"), Err(crate::Error::Config(_))));
        assert_eq!(TaskKind::from_name("raid").unwrap(), TaskKind::Raid);
    }

    fn trajectory(id: TaskId, steps: usize) -> Vec<(Vec<f64>, f64)> {
        let mut t = generate_task(id, cfg()).unwrap();
        t.set_autoreset(true);
        let mut rng = rng_from(99, &[]);
        (0..steps)
            .map(|_| {
                let r = t.step(rng.random_range(0..4)).unwrap();
                (r.obs, r.raw)
            })
            .collect()
    }

    #[test]
    fn same_id_same_trajectory() {
        for k in TaskKind::ALL {
            let id = TaskId::new(k, 3);
            assert_eq!(trajectory(id, 100), trajectory(id, 100));
        }
    }

    #[test]
    fn initial_frames_pairwise_distinct() {
        let frames: Vec<Vec<f64>> =
            TaskKind::ALL.iter().map(|&k| generate_task(TaskId::new(k, 0), cfg()).unwrap().observation().to_vec()).collect();
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                assert_ne!(frames[i], frames[j]);
            }
        }
        let a = generate_task(TaskId::new(TaskKind::Chase, 3), cfg()).unwrap();
        let b = generate_task(TaskId::new(TaskKind::Chase, 4), cfg()).unwrap();
        assert_ne!(a.observation(), b.observation());
    }

    #[test]
    fn noop_is_inert_for_the_paddle() {
        for k in TaskKind::ALL {
            let mut t = generate_task(TaskId::new(k, 5), cfg()).unwrap();
            let x = t.paddle_position();
            let r = t.step(0).unwrap();
            assert_eq!(t.paddle_position(), x);
            if k == TaskKind::Chase {
                assert_eq!(r.raw, 0.0);
            }
        }
    }

    #[test]
    fn observations_stay_in_unit_interval_and_rewards_clip() {
        for k in TaskKind::ALL {
            let mut t = generate_task(TaskId::new(k, 8), cfg()).unwrap();
            t.set_autoreset(true);
            let mut rng = rng_from(1, &[]);
            for _ in 0..300 {
                let r = t.step(rng.random_range(0..4)).unwrap();
                assert_eq!(r.obs.len(), 4 * 144);
                assert!(r.obs.iter().all(|v| (0.0..=1.0).contains(v)));
                assert!([-1.0, 0.0, 1.0].contains(&r.reward));
                assert_eq!(r.reward, clip_reward(r.raw));
            }
        }
    }

    #[test]
    fn terminal_without_autoreset_is_a_contract_error() {
        let c = EnvConfig { max_episode_steps: 3, ..cfg() };
        let mut t = generate_task(TaskId::new(TaskKind::Volley, 1), c).unwrap();
        assert!(!t.step(0).unwrap().done);
        assert!(!t.step(0).unwrap().done);
        let last = t.step(0).unwrap();
        assert!(last.done && last.episode_score.is_some());
        assert!(matches!(t.step(0), Err(crate::Error::Contract(_))));
        t.reset();
        assert!(t.step(0).is_ok());
    }

    #[test]
    fn autoreset_returns_fresh_stack() {
        let c = EnvConfig { max_episode_steps: 2, ..cfg() };
        let mut t = generate_task(TaskId::new(TaskKind::Chase, 1), c).unwrap();
        t.set_autoreset(true);
        t.step(2).unwrap();
        let r = t.step(2).unwrap();
        assert!(r.done);
        let term = r.terminal_obs.unwrap();
        assert_ne!(term, r.obs);
        // A fresh stack repeats its first frame four times.
        assert!(r.obs.chunks(144).all(|f| f == &r.obs[..144]));
        assert_eq!(t.step(0).unwrap().episode_step, 1);
    }

    #[test]
    fn single_worker_vector_env_matches_step() {
        let id = TaskId::new(TaskKind::Swarm, 12);
        let mut v = VectorEnv::new(&[id], cfg()).unwrap();
        let mut t = generate_task(id, cfg()).unwrap();
        t.set_autoreset(true);
        let mut rng = rng_from(4, &[]);
        for _ in 0..250 {
            let a = rng.random_range(0..4);
            let vs = v.step(&[a]).unwrap();
            let s = t.step(a).unwrap();
            assert_eq!(vs.raw[0], s.raw);
            assert_eq!(vs.dones[0], s.done);
            assert_eq!(v.observations(), &s.obs[..]);
        }
    }

    #[test]
    fn workers_are_independent() {
        let ids: Vec<TaskId> = (0..3).map(|i| TaskId::new(TaskKind::Raid, 100 + i)).collect();
        let mut perm = ids.clone();
        perm.swap(0, 2);
        let run = |ids: &[TaskId]| {
            let mut v = VectorEnv::new(ids, cfg()).unwrap();
            let mut obs = vec![Vec::new(); 3];
            for s in 0..60 {
                v.step(&[s % 4, s % 4, s % 4]).unwrap();
                for w in 0..3 {
                    obs[w].push(v.observations()[w * 576..(w + 1) * 576].to_vec());
                }
            }
            obs
        };
        let a = run(&ids);
        let b = run(&perm);
        assert_eq!(a[0], b[2]);
        assert_eq!(a[2], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn singleton_and_uniform_task_sampling() {
        let one = [TaskId::new(TaskKind::Dodge, 1)];
        let mut rng = rng_from(0, &[]);
        for _ in 0..50 {
            assert_eq!(sample_task(&one, &mut rng).unwrap(), one[0]);
        }
        assert!(sample_task(&[], &mut rng).is_err());
        let two = [TaskId::new(TaskKind::Swarm, 0), TaskId::new(TaskKind::Raid, 0)];
        let n = 10_000;
        let hits = (0..n).filter(|_| sample_task(&two, &mut rng).unwrap() == two[0]).count();
        let sigma = libm::sqrt(n as f64 * 0.25);
        assert!((hits as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
    }
}
