use std::fmt::Write as _;
use std::path::Path;

use super::predicate::Predicate;
use crate::error::{Error, Result};

/// Version of the environment file format written by [`GridworldEnv::to_text`].
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "impactlab-env";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Down, Dir::Left, Dir::Right];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Dir::Up => (-1, 0),
            Dir::Down => (1, 0),
            Dir::Left => (0, -1),
            Dir::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terrain {
    Floor,
    Wall,
    /// Standing here pays the default task reward each step.
    Goal,
    /// Moves whatever stands on it one cell per step.
    Belt(Dir),
    /// The agent freezes on arrival; annotated as a crash.
    Crash,
    /// Opens when the agent walks through; `interact` next to it closes it.
    Door,
    /// `interact` here assembles the subagent.
    Kit,
    /// `interact` here flips the world switch for good.
    Switch,
}

impl Terrain {
    pub fn glyph(self) -> char {
        match self {
            Terrain::Floor => '.',
            Terrain::Wall => '#',
            Terrain::Goal => 'G',
            Terrain::Belt(Dir::Up) => '^',
            Terrain::Belt(Dir::Down) => 'v',
            Terrain::Belt(Dir::Left) => '<',
            Terrain::Belt(Dir::Right) => '>',
            Terrain::Crash => 'X',
            Terrain::Door => 'D',
            Terrain::Kit => 'K',
            Terrain::Switch => 'L',
        }
    }

    fn from_glyph(ch: char) -> Option<Self> {
        Some(match ch {
            '.' | 'A' => Terrain::Floor,
            '#' => Terrain::Wall,
            'G' => Terrain::Goal,
            '^' => Terrain::Belt(Dir::Up),
            'v' => Terrain::Belt(Dir::Down),
            '<' => Terrain::Belt(Dir::Left),
            '>' => Terrain::Belt(Dir::Right),
            'X' => Terrain::Crash,
            'D' => Terrain::Door,
            'K' => Terrain::Kit,
            'L' => Terrain::Switch,
            _ => return None,
        })
    }

    /// Cells an object may rest on.
    pub fn holds_objects(self) -> bool {
        matches!(self, Terrain::Floor | Terrain::Belt(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    /// Pushable; a blocked push blocks the agent.
    Box,
    /// Pushable; a blocked push smashes it. Falls and breaks off a belt end.
    Vase,
    /// Pushable conveyor payload; delivered when carried off a belt end.
    Sushi,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Vase => "vase",
            ObjectKind::Sushi => "sushi",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "box" => ObjectKind::Box,
            "vase" => ObjectKind::Vase,
            "sushi" => ObjectKind::Sushi,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub cell: (usize, usize),
}

/// `phi(s) = scale * [predicate(s)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub name: String,
    pub scale: f64,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldEnv {
    pub name: String,
    pub layout_version: u32,
    pub description: String,
    pub horizon: usize,
    pub gamma: f64,
    pub grid: Vec<Vec<Terrain>>,
    pub agent_start: (usize, usize),
    pub objects: Vec<ObjectSpec>,
    /// Latched task predicate. `None` means "agent reaches a goal cell"
    /// (an environment without goal cells then has no task).
    pub goal: Option<Predicate>,
    pub side_effects: Vec<Predicate>,
    pub features: Vec<FeatureDef>,
    /// Auxiliary state rewards `R_i(s, a) = [predicate_i(s)]`.
    pub aux_rewards: Vec<Predicate>,
}

impl GridworldEnv {
    pub fn height(&self) -> usize {
        self.grid.len()
    }

    pub fn width(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    pub fn terrain(&self, cell: (usize, usize)) -> Terrain {
        self.grid[cell.0][cell.1]
    }

    pub fn in_grid(&self, cell: (usize, usize)) -> bool {
        cell.0 < self.height() && cell.1 < self.width()
    }

    pub fn walkable_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, row) in self.grid.iter().enumerate() {
            for (c, t) in row.iter().enumerate() {
                if *t != Terrain::Wall {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn has_terrain(&self, pred: impl Fn(Terrain) -> bool) -> bool {
        self.grid.iter().flatten().any(|t| pred(*t))
    }

    /// Checks structural invariants. Compilation checks the rest.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEnv(m));
        if self.grid.is_empty() || self.width() == 0 {
            return bad("empty grid".into());
        }
        if self.grid.iter().any(|r| r.len() != self.width()) {
            return bad("grid rows have different widths".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} not in (0,1)", self.gamma));
        }
        if !self.in_grid(self.agent_start) || self.terrain(self.agent_start) != Terrain::Floor {
            return bad("agent start must be a floor cell".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !self.in_grid(o.cell) || !self.terrain(o.cell).holds_objects() {
                return bad(format!("object {i} is not on a floor or belt cell"));
            }
            if o.cell == self.agent_start {
                return bad(format!("object {i} overlaps the agent start"));
            }
            if self.objects[..i].iter().any(|p| p.cell == o.cell) {
                return bad(format!("object {i} overlaps another object"));
            }
        }
        let mut preds: Vec<(&str, &Predicate)> = Vec::new();
        preds.extend(self.goal.iter().map(|p| ("goal", p)));
        preds.extend(self.side_effects.iter().map(|p| ("side-effect", p)));
        preds.extend(self.features.iter().map(|f| ("feature", &f.predicate)));
        preds.extend(self.aux_rewards.iter().map(|p| ("aux", p)));
        for (what, p) in preds {
            if let Some(i) = p.objects().into_iter().find(|&i| i >= self.objects.len()) {
                return bad(format!("{what} predicate '{p}' names missing object {i}"));
            }
            if let Some(c) = p
                .cells()
                .into_iter()
                .find(|&c| !self.in_grid(c) || self.terrain(c) == Terrain::Wall)
            {
                return bad(format!("{what} predicate '{p}' names unreachable cell {c:?}"));
            }
        }
        for f in &self.features {
            if !f.scale.is_finite() {
                return bad(format!("feature '{}' has non-finite scale", f.name));
            }
        }
        Ok(())
    }

    /// Canonical text form. `from_text(to_text(env)) == env` and the text
    /// of a loaded canonical file is reproduced byte for byte.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "layout-version {}", self.layout_version);
        let _ = writeln!(s, "description {}", self.description);
        let _ = writeln!(s, "horizon {}", self.horizon);
        let _ = writeln!(s, "gamma {}", self.gamma);
        let _ = writeln!(s, "grid {} {}", self.height(), self.width());
        for (r, row) in self.grid.iter().enumerate() {
            let line: String = row
                .iter()
                .enumerate()
                .map(|(c, t)| {
                    if (r, c) == self.agent_start {
                        'A'
                    } else {
                        t.glyph()
                    }
                })
                .collect();
            let _ = writeln!(s, "{line}");
        }
        for o in &self.objects {
            let _ = writeln!(s, "object {} {} {}", o.kind.name(), o.cell.0, o.cell.1);
        }
        if let Some(g) = &self.goal {
            let _ = writeln!(s, "goal {g}");
        }
        for p in &self.side_effects {
            let _ = writeln!(s, "side-effect {p}");
        }
        for f in &self.features {
            let _ = writeln!(s, "feature {} {} {}", f.name, f.scale, f.predicate);
        }
        for p in &self.aux_rewards {
            let _ = writeln!(s, "aux {p}");
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (n, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(err(n, format!("expected '{MAGIC} <version>' header")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(n, "missing format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }

        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected '{key}'")))?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ if l == key => Ok((n, String::new())),
                _ => Err(err(n, format!("expected field '{key}'"))),
            }
        };
        let parse_num = |n: usize, key: &str, v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| err(n, format!("field '{key}': bad integer '{v}'")))
        };

        let (_, name) = field("name")?;
        let (n, v) = field("layout-version")?;
        let layout_version = parse_num(n, "layout-version", &v)? as u32;
        let (_, description) = field("description")?;
        let (n, v) = field("horizon")?;
        let horizon = parse_num(n, "horizon", &v)?;
        let (n, v) = field("gamma")?;
        let gamma: f64 = v
            .trim()
            .parse()
            .map_err(|_| err(n, format!("field 'gamma': bad number '{v}'")))?;
        let (n, v) = field("grid")?;
        let dims: Vec<&str> = v.split_whitespace().collect();
        if dims.len() != 2 {
            return Err(err(n, "field 'grid': expected '<rows> <cols>'".into()));
        }
        let rows = parse_num(n, "grid", dims[0])?;
        let cols = parse_num(n, "grid", dims[1])?;
        drop(field);

        let mut grid = Vec::with_capacity(rows);
        let mut start = None;
        for r in 0..rows {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file in grid row {r}")))?;
            let chars: Vec<char> = l.chars().collect();
            if chars.len() != cols {
                return Err(err(n, format!("grid row has {} cells, expected {cols}", chars.len())));
            }
            let mut row = Vec::with_capacity(cols);
            for (c, ch) in chars.into_iter().enumerate() {
                if ch == 'A' {
                    if start.is_some() {
                        return Err(err(n, "second agent start".into()));
                    }
                    start = Some((r, c));
                }
                row.push(
                    Terrain::from_glyph(ch)
                        .ok_or_else(|| err(n, format!("unknown cell glyph '{ch}'")))?,
                );
            }
            grid.push(row);
        }
        let agent_start = start.ok_or_else(|| err(0, "grid has no agent start 'A'".into()))?;

        let mut env = GridworldEnv {
            name,
            layout_version,
            description,
            horizon,
            gamma,
            grid,
            agent_start,
            objects: Vec::new(),
            goal: None,
            side_effects: Vec::new(),
            features: Vec::new(),
            aux_rewards: Vec::new(),
        };

        let mut ended = false;
        for (n, l) in lines.by_ref() {
            if l == "end" {
                ended = true;
                break;
            }
            let (key, rest) = l.split_once(' ').unwrap_or((l, ""));
            match key {
                "object" => {
                    let p: Vec<&str> = rest.split_whitespace().collect();
                    if p.len() != 3 {
                        return Err(err(n, "object: expected '<kind> <row> <col>'".into()));
                    }
                    let kind = ObjectKind::from_name(p[0])
                        .ok_or_else(|| err(n, format!("object: unknown kind '{}'", p[0])))?;
                    let cell = (parse_num(n, "object", p[1])?, parse_num(n, "object", p[2])?);
                    env.objects.push(ObjectSpec { kind, cell });
                }
                "goal" => env.goal = Some(Predicate::parse_at(rest, n)?),
                "side-effect" => env.side_effects.push(Predicate::parse_at(rest, n)?),
                "aux" => env.aux_rewards.push(Predicate::parse_at(rest, n)?),
                "feature" => {
                    let mut it = rest.splitn(3, ' ');
                    let (fname, scale, pred) = match (it.next(), it.next(), it.next()) {
                        (Some(a), Some(b), Some(c)) => (a, b, c),
                        _ => {
                            return Err(err(n, "feature: expected '<name> <scale> <predicate>'".into()))
                        }
                    };
                    let scale: f64 = scale
                        .parse()
                        .map_err(|_| err(n, format!("feature: bad scale '{scale}'")))?;
                    env.features.push(FeatureDef {
                        name: fname.to_string(),
                        scale,
                        predicate: Predicate::parse_at(pred, n)?,
                    });
                }
                _ => return Err(err(n, format!("unknown field '{key}'"))),
            }
        }
        if !ended {
            return Err(err(0, "unexpected end of file, missing 'end'".into()));
        }
        if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(err(n, "content after 'end'".into()));
        }
        env.validate()?;
        Ok(env)
    }
}

pub fn save_env(env: &GridworldEnv, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, env.to_text())?;
    Ok(())
}

pub fn load_env(path: impl AsRef<Path>) -> Result<GridworldEnv> {
    let text = std::fs::read_to_string(path)?;
    GridworldEnv::from_text(&text)
}
