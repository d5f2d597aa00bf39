//! Compiles a gridworld into a dense MDP.
//!
//! States are every *valid configuration* of the world, enumerated in a fixed
//! lexicographic order: agent cell, then each object (cells in row-major
//! order, then "gone"), then door, switch, subagent and goal latch. A
//! configuration is valid when no two objects share a cell, no object sits
//! under the agent, and the subagent does not stand on an intact vase.
//!
//! Actions: `0` no-op, `1..=4` move up/down/left/right, and `5` interact
//! when the grid has a door, kit or switch. The no-op leaves the agent in
//! place while belts and the subagent keep moving.

use std::collections::{HashMap, VecDeque};

use super::grid::{Dir, GridworldEnv, ObjectKind, Terrain};
use super::predicate::Predicate;
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::solvers::TaskReward;

pub const DEFAULT_STATE_CAP: usize = 200_000;

pub const NOOP: usize = 0;
pub const INTERACT: usize = 5;

pub fn action_name(a: usize) -> &'static str {
    ["noop", "up", "down", "left", "right", "interact"]
        .get(a)
        .copied()
        .unwrap_or("?")
}

fn action_dir(a: usize) -> Option<Dir> {
    match a {
        1 => Some(Dir::Up),
        2 => Some(Dir::Down),
        3 => Some(Dir::Left),
        4 => Some(Dir::Right),
        _ => None,
    }
}

type Cell = (usize, usize);

/// One world configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Config {
    pub agent: Cell,
    /// `None` once an object is broken or delivered.
    pub objects: Vec<Option<Cell>>,
    pub door_open: bool,
    pub switch_on: bool,
    pub subagent: Option<Cell>,
    pub done: bool,
}

/// Per-state annotations derived from the environment's predicates.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvAnnotations {
    pub goal: Vec<bool>,
    /// Disjunction of every side-effect predicate.
    pub side_effect: Vec<bool>,
    /// Each side-effect predicate separately, with its text.
    pub side_effect_terms: Vec<(String, Vec<bool>)>,
    pub feature_names: Vec<String>,
    /// `feature_table[s]` is the feature vector of state `s`.
    pub feature_table: Vec<Vec<f64>>,
    /// One indicator vector per auxiliary reward.
    pub aux: Vec<Vec<bool>>,
    /// States where the agent is frozen (crash cells).
    pub terminal: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct CompiledEnv {
    pub env: GridworldEnv,
    pub mdp: Mdp,
    pub annotations: EnvAnnotations,
    /// 1 for every step that ends in a goal state.
    pub task: TaskReward,
    pub start: usize,
    configs: Vec<Config>,
    index: HashMap<Config, usize>,
}

impl CompiledEnv {
    pub fn n_states(&self) -> usize {
        self.configs.len()
    }

    pub fn config(&self, state: usize) -> &Config {
        &self.configs[state]
    }

    pub fn state_of(&self, config: &Config) -> Option<usize> {
        self.index.get(config).copied()
    }

    /// Auxiliary rewards as `(state, action)` tables.
    pub fn aux_rewards(&self) -> Vec<TaskReward> {
        self.annotations
            .aux
            .iter()
            .map(|ind| {
                let vals: Vec<f64> = ind.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                TaskReward::from_state_reward(&vals, self.mdp.n_actions())
            })
            .collect()
    }

    /// State reached from `state` by the deterministic action sequence.
    pub fn follow(&self, state: usize, actions: &[usize]) -> usize {
        actions.iter().fold(state, |s, &a| {
            self.mdp.successors(s, a)[0].0
        })
    }

    pub fn describe(&self, state: usize) -> String {
        let c = &self.configs[state];
        let mut s = format!("agent={:?}", c.agent);
        for (i, o) in c.objects.iter().enumerate() {
            match o {
                Some(cell) => s += &format!(" obj{i}={cell:?}"),
                None => s += &format!(" obj{i}=gone"),
            }
        }
        if c.door_open {
            s += " door=open";
        }
        if c.switch_on {
            s += " switch=on";
        }
        if let Some(p) = c.subagent {
            s += &format!(" subagent={p:?}");
        }
        if c.done {
            s += " done";
        }
        s
    }

    pub fn into_parts(self) -> (Mdp, EnvAnnotations, TaskReward) {
        (self.mdp, self.annotations, self.task)
    }
}

struct World<'a> {
    env: &'a GridworldEnv,
}

impl World<'_> {
    fn neighbor(&self, cell: Cell, d: Dir) -> Option<Cell> {
        let (dr, dc) = d.delta();
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 {
            return None;
        }
        let n = (r as usize, c as usize);
        self.env.in_grid(n).then_some(n)
    }

    fn passable(&self, cell: Option<Cell>) -> Option<Cell> {
        cell.filter(|&c| self.env.terrain(c) != Terrain::Wall)
    }

    fn frozen(&self, c: &Config) -> bool {
        self.env.terrain(c.agent) == Terrain::Crash
    }

    fn object_at(c: &Config, cell: Cell) -> Option<usize> {
        c.objects.iter().position(|o| *o == Some(cell))
    }

    fn free_for_object(&self, c: &Config, cell: Cell) -> bool {
        self.env.terrain(cell).holds_objects()
            && Self::object_at(c, cell).is_none()
            && c.agent != cell
            && c.subagent != Some(cell)
    }

    fn step(&self, c: &Config, action: usize) -> Config {
        let mut n = c.clone();
        if !self.frozen(&n) {
            if let Some(d) = action_dir(action) {
                self.move_agent(&mut n, d);
            } else if action == INTERACT {
                self.interact(&mut n);
            }
        }
        self.advance(&mut n);
        if let Some(goal) = &self.env.goal {
            if !n.done && self.eval(goal, &n) {
                n.done = true;
            }
        }
        n
    }

    fn move_agent(&self, n: &mut Config, d: Dir) {
        let Some(target) = self.passable(self.neighbor(n.agent, d)) else {
            return;
        };
        if let Some(i) = Self::object_at(n, target) {
            let dest = self.neighbor(target, d);
            match dest {
                Some(dest) if self.free_for_object(n, dest) => n.objects[i] = Some(dest),
                _ if self.env.objects[i].kind == ObjectKind::Vase => n.objects[i] = None,
                _ => return,
            }
        }
        if self.env.terrain(target) == Terrain::Door {
            n.door_open = true;
        }
        n.agent = target;
    }

    fn interact(&self, n: &mut Config) {
        match self.env.terrain(n.agent) {
            Terrain::Kit if n.subagent.is_none() => n.subagent = Some(n.agent),
            Terrain::Switch => n.switch_on = true,
            Terrain::Door => {}
            _ => {
                let next_to_door = Dir::ALL.iter().any(|&d| {
                    self.neighbor(n.agent, d)
                        .is_some_and(|c| self.env.terrain(c) == Terrain::Door)
                });
                if n.door_open && next_to_door {
                    n.door_open = false;
                }
            }
        }
    }

    /// World dynamics that run every step regardless of the agent's action.
    fn advance(&self, n: &mut Config) {
        for i in 0..n.objects.len() {
            let Some(cell) = n.objects[i] else { continue };
            let Terrain::Belt(d) = self.env.terrain(cell) else { continue };
            match self.passable(self.neighbor(cell, d)) {
                None => n.objects[i] = None,
                Some(dest) if self.free_for_object(n, dest) => n.objects[i] = Some(dest),
                Some(_) => {}
            }
        }
        if !self.frozen(n) {
            if let Terrain::Belt(d) = self.env.terrain(n.agent) {
                if let Some(dest) = self.passable(self.neighbor(n.agent, d)) {
                    if Self::object_at(n, dest).is_none() {
                        if self.env.terrain(dest) == Terrain::Door {
                            n.door_open = true;
                        }
                        n.agent = dest;
                    }
                }
            }
        }
        if let Some(pos) = n.subagent {
            if let Some(next) = self.subagent_step(n, pos) {
                if let Some(i) = Self::object_at(n, next) {
                    if self.env.objects[i].kind == ObjectKind::Vase {
                        n.objects[i] = None;
                    }
                }
                n.subagent = Some(next);
            }
        }
    }

    /// First step of a shortest path from `from` to the nearest intact vase.
    fn subagent_step(&self, c: &Config, from: Cell) -> Option<Cell> {
        let is_vase = |cell: Cell| {
            Self::object_at(c, cell).is_some_and(|i| self.env.objects[i].kind == ObjectKind::Vase)
        };
        let mut first: HashMap<Cell, Option<Cell>> = HashMap::from([(from, None)]);
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            if cur != from && is_vase(cur) {
                return first[&cur];
            }
            for d in Dir::ALL {
                if let Some(nb) = self.passable(self.neighbor(cur, d)) {
                    if !first.contains_key(&nb) {
                        let f = first[&cur].or(Some(nb));
                        first.insert(nb, f);
                        queue.push_back(nb);
                    }
                }
            }
        }
        None
    }

    fn goal_reached(&self, c: &Config) -> bool {
        match &self.env.goal {
            Some(_) => c.done,
            None => self.env.terrain(c.agent) == Terrain::Goal,
        }
    }

    fn eval(&self, p: &Predicate, c: &Config) -> bool {
        let obj = |i: usize| c.objects.get(i).copied().flatten();
        match p {
            Predicate::True => true,
            Predicate::AgentAt(r, col) => c.agent == (*r, *col),
            Predicate::AgentOnGoal => self.env.terrain(c.agent) == Terrain::Goal,
            Predicate::GoalReached => self.goal_reached(c),
            Predicate::Crashed => self.env.terrain(c.agent) == Terrain::Crash,
            Predicate::DoorOpen => c.door_open,
            Predicate::SwitchOn => c.switch_on,
            Predicate::SubagentBuilt => c.subagent.is_some(),
            Predicate::ObjectGone(i) => obj(*i).is_none(),
            Predicate::ObjectOnBelt(i) => {
                obj(*i).is_some_and(|cell| matches!(self.env.terrain(cell), Terrain::Belt(_)))
            }
            Predicate::ObjectRemoved(i) => {
                obj(*i).is_some_and(|cell| !matches!(self.env.terrain(cell), Terrain::Belt(_)))
            }
            Predicate::ObjectAt(i, r, col) => obj(*i) == Some((*r, *col)),
            Predicate::ObjectCornered(i) => obj(*i).is_some_and(|cell| {
                let wall = |d| self.passable(self.neighbor(cell, d)).is_none();
                (wall(Dir::Up) || wall(Dir::Down)) && (wall(Dir::Left) || wall(Dir::Right))
            }),
            Predicate::Not(q) => !self.eval(q, c),
            Predicate::And(qs) => qs.iter().all(|q| self.eval(q, c)),
            Predicate::Or(qs) => qs.iter().any(|q| self.eval(q, c)),
        }
    }
}

fn enumerate_configs(env: &GridworldEnv, cap: usize) -> Result<Vec<Config>> {
    let walkable = env.walkable_cells();
    let object_cells: Vec<Cell> = walkable
        .iter()
        .copied()
        .filter(|&c| env.terrain(c).holds_objects())
        .collect();
    let has_door = env.has_terrain(|t| t == Terrain::Door);
    let has_switch = env.has_terrain(|t| t == Terrain::Switch);
    let has_kit = env.has_terrain(|t| t == Terrain::Kit);
    let has_latch = env.goal.is_some();

    let bools = |on: bool| if on { vec![false, true] } else { vec![false] };
    let mut subagents = vec![None];
    if has_kit {
        subagents.extend(walkable.iter().map(|&c| Some(c)));
    }

    let mut out = Vec::new();
    let mut objs: Vec<Option<Cell>> = Vec::with_capacity(env.objects.len());
    for &agent in &walkable {
        // depth-first over object placements
        fn place(
            env: &GridworldEnv,
            agent: Cell,
            object_cells: &[Cell],
            objs: &mut Vec<Option<Cell>>,
            emit: &mut dyn FnMut(&[Option<Cell>]) -> Result<()>,
        ) -> Result<()> {
            if objs.len() == env.objects.len() {
                return emit(objs);
            }
            let choices = object_cells.iter().map(|&c| Some(c)).chain(std::iter::once(None));
            for choice in choices {
                if let Some(cell) = choice {
                    if cell == agent || objs.contains(&Some(cell)) {
                        continue;
                    }
                }
                objs.push(choice);
                place(env, agent, object_cells, objs, emit)?;
                objs.pop();
            }
            Ok(())
        }
        let mut emit = |placed: &[Option<Cell>]| -> Result<()> {
            for &door_open in &bools(has_door) {
                for &switch_on in &bools(has_switch) {
                    for &subagent in &subagents {
                        if let Some(p) = subagent {
                            let on_vase = placed.iter().zip(&env.objects).any(|(o, spec)| {
                                *o == Some(p) && spec.kind == ObjectKind::Vase
                            });
                            if on_vase {
                                continue;
                            }
                        }
                        for &done in &bools(has_latch) {
                            if out.len() >= cap {
                                return Err(Error::StateSpaceTooLarge { cap });
                            }
                            out.push(Config {
                                agent,
                                objects: placed.to_vec(),
                                door_open,
                                switch_on,
                                subagent,
                                done,
                            });
                        }
                    }
                }
            }
            Ok(())
        };
        place(env, agent, &object_cells, &mut objs, &mut emit)?;
    }
    Ok(out)
}

pub fn compile_to_mdp(env: &GridworldEnv) -> Result<CompiledEnv> {
    compile_with_cap(env, DEFAULT_STATE_CAP)
}

pub fn compile_with_cap(env: &GridworldEnv, cap: usize) -> Result<CompiledEnv> {
    env.validate()?;
    let configs = enumerate_configs(env, cap)?;
    let index: HashMap<Config, usize> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    let world = World { env };
    let interactive = env.has_terrain(|t| matches!(t, Terrain::Door | Terrain::Kit | Terrain::Switch));
    let n_actions = if interactive { 6 } else { 5 };
    let n = configs.len();

    let mut next = Vec::with_capacity(n);
    for c in &configs {
        let mut row = Vec::with_capacity(n_actions);
        for a in 0..n_actions {
            let succ = world.step(c, a);
            let j = *index.get(&succ).ok_or_else(|| {
                Error::InvalidEnv(format!("dynamics left the configuration space: {succ:?}"))
            })?;
            row.push(j);
        }
        next.push(row);
    }
    let mdp = Mdp::deterministic(&next, NOOP, env.gamma)?;

    let start_config = Config {
        agent: env.agent_start,
        objects: env.objects.iter().map(|o| Some(o.cell)).collect(),
        door_open: false,
        switch_on: false,
        subagent: None,
        done: false,
    };
    let start = index[&start_config];

    let eval_all = |p: &Predicate| -> Vec<bool> { configs.iter().map(|c| world.eval(p, c)).collect() };
    let goal: Vec<bool> = configs.iter().map(|c| world.goal_reached(c)).collect();
    let side_effect_terms: Vec<(String, Vec<bool>)> = env
        .side_effects
        .iter()
        .map(|p| (p.to_string(), eval_all(p)))
        .collect();
    let side_effect = (0..n)
        .map(|s| side_effect_terms.iter().any(|(_, v)| v[s]))
        .collect();
    let feature_cols: Vec<Vec<bool>> = env.features.iter().map(|f| eval_all(&f.predicate)).collect();
    let feature_table = (0..n)
        .map(|s| {
            env.features
                .iter()
                .zip(&feature_cols)
                .map(|(f, col)| if col[s] { f.scale } else { 0.0 })
                .collect()
        })
        .collect();
    let aux = env.aux_rewards.iter().map(|p| eval_all(p)).collect();
    let terminal = configs.iter().map(|c| world.frozen(c)).collect();

    let mut task = TaskReward::zeros(n, n_actions);
    for s in 0..n {
        for a in 0..n_actions {
            let j = next[s][a];
            if goal[j] {
                task.set(s, a, 1.0);
            }
        }
    }

    Ok(CompiledEnv {
        env: env.clone(),
        mdp,
        annotations: EnvAnnotations {
            goal,
            side_effect,
            side_effect_terms,
            feature_names: env.features.iter().map(|f| f.name.clone()).collect(),
            feature_table,
            aux,
            terminal,
        },
        task,
        start,
        configs,
        index,
    })
}
