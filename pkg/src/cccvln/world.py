"""Procedural grid worlds, path sampling, and the ground-truth instruction grammar.

Cells are nodes (id = y * width + x); walls sit between cells and remove the
edge.  Each node has four subviews in fixed N, E, S, W order.  A subview's
feature vector is 11-d: one-hot landmark (0-7), (cos, sin) of the heading
angle, and a navigability bit.  Headings use the math convention, so east is
0 degrees and north is 90.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

N, E, S, W = 0, 1, 2, 3
STOP = 4
DIRS = ("N", "E", "S", "W")
DIR_WORDS = ("north", "east", "south", "west")
STEP = ((0, -1), (1, 0), (0, 1), (-1, 0))
# exact (cos, sin) per heading; avoids 1e-16 residue from np.cos(pi/2)
HEADING_CS = ((0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0))
OPPOSITE = (S, W, N, E)

N_LANDMARKS = 8
N_SUBVIEWS = 4
FEATURE_DIM = 11
LANDMARK_WORDS = ("door", "table", "plant", "lamp", "sofa", "shelf", "stairs", "sink")

VOCAB = ("<bos>", "<eos>", "walk", "north", "south", "east", "west", "to", "the", "then",
         "stop", "at") + LANDMARK_WORDS
BOS, EOS = 0, 1
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
MAX_INSTRUCTION_LEN = 48
MAX_SEGMENTS = 7


class WorldError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class World:
    id: str
    width: int
    height: int
    landmarks: np.ndarray  # (n_nodes, 4) int
    nav: np.ndarray  # (n_nodes, 4) bool
    seed: int = 0
    wall_density: float = 0.0
    features: np.ndarray = field(init=False, repr=False, compare=False)
    _dist: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        n = self.width * self.height
        feats = np.zeros((n, N_SUBVIEWS, FEATURE_DIM))
        for k in range(N_SUBVIEWS):
            feats[np.arange(n), k, self.landmarks[:, k]] = 1.0
            feats[:, k, 8], feats[:, k, 9] = HEADING_CS[k]
            feats[:, k, 10] = self.nav[:, k]
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def n_nodes(self) -> int:
        return self.width * self.height

    @property
    def world(self) -> "World":
        return self

    def coords(self, node: int) -> tuple[int, int]:
        return node % self.width, node // self.width

    def check_node(self, node: int) -> None:
        if not (isinstance(node, (int, np.integer)) and 0 <= node < self.n_nodes):
            raise WorldError(f"unknown node {node!r} in world {self.id}")

    def navigable(self, node: int, d: int) -> bool:
        return bool(self.nav[node, d])

    def neighbor(self, node: int, d: int) -> int | None:
        if not self.nav[node, d]:
            return None
        x, y = self.coords(node)
        dx, dy = STEP[d]
        return (y + dy) * self.width + (x + dx)

    def subviews(self, node: int) -> np.ndarray:
        return self.features[node]

    def n_edges(self) -> int:
        return int(self.nav.sum()) // 2

    def distances(self, src: int) -> np.ndarray:
        d = self._dist.get(src)
        if d is None:
            d = _bfs(self, src)
            self._dist[src] = d
        return d

    def to_text(self) -> str:
        lines = ["ccc-world 1", f"id {self.id}", f"size {self.width} {self.height}",
                 f"seed {self.seed}", f"wall_density {self.wall_density!r}"]
        for node in range(self.n_nodes):
            x, y = self.coords(node)
            lm = " ".join(str(int(v)) for v in self.landmarks[node])
            nv = " ".join(str(int(v)) for v in self.nav[node])
            lines.append(f"{x} {y} {lm} {nv}")
        return "\n".join(lines) + "\n"


def _bfs(world: World, src: int) -> np.ndarray:
    dist = np.full(world.n_nodes, -1, dtype=np.int64)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for d in range(4):
            v = world.neighbor(u, d)
            if v is not None and dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_connected(world: World) -> bool:
    return bool((_bfs(world, 0) >= 0).all())


def generate_world(seed: int, width: int, height: int, wall_density: float = 0.0,
                   world_id: str | None = None, max_retries: int = 100) -> World:
    """Seeded grid world; each internal edge is walled off with probability ``wall_density``."""
    if width < 2 or height < 2:
        raise WorldError("width and height must be >= 2")
    if not 0.0 <= wall_density <= 0.4:
        raise WorldError("wall density must lie in [0, 0.4]")
    n = width * height
    wid = world_id if world_id is not None else f"w{seed}-{width}x{height}"
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, width, height, attempt])
        nav = np.zeros((n, 4), dtype=bool)
        # horizontal edges, then vertical, in row-major order
        for y in range(height):
            for x in range(width - 1):
                if rng.random() >= wall_density:
                    a = y * width + x
                    nav[a, E] = nav[a + 1, W] = True
        for y in range(height - 1):
            for x in range(width):
                if rng.random() >= wall_density:
                    a = y * width + x
                    nav[a, S] = nav[a + width, N] = True
        landmarks = rng.integers(0, N_LANDMARKS, size=(n, 4))
        world = World(wid, width, height, landmarks, nav, seed, float(wall_density))
        if is_connected(world):
            return world
    raise WorldError(f"no connected world after {max_retries} retries "
                     f"(seed={seed}, {width}x{height}, density={wall_density})")


def parse_world(text: str) -> World:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        if lines[0] != "ccc-world 1":
            raise WorldError(f"unsupported world header {lines[0]!r}")
        wid = lines[1].split(" ", 1)[1]
        _, w, h = lines[2].split()
        width, height = int(w), int(h)
        seed = int(lines[3].split()[1])
        density = float(lines[4].split()[1])
        body = lines[5:]
        if len(body) != width * height:
            raise WorldError(f"expected {width * height} node lines, got {len(body)}")
        landmarks = np.zeros((width * height, 4), dtype=np.int64)
        nav = np.zeros((width * height, 4), dtype=bool)
        for lineno, ln in enumerate(body, start=6):
            vals = [int(v) for v in ln.split()]
            if len(vals) != 10:
                raise WorldError(f"line {lineno}: expected 10 fields")
            x, y = vals[0], vals[1]
            node = y * width + x
            landmarks[node] = vals[2:6]
            nav[node] = [bool(v) for v in vals[6:10]]
    except (IndexError, ValueError) as exc:
        if isinstance(exc, WorldError):
            raise
        raise WorldError(f"malformed world file: {exc}") from exc
    world = World(wid, width, height, landmarks, nav, seed, density)
    for node in range(world.n_nodes):
        for d in range(4):
            v = world.neighbor(node, d)
            if v is not None and not (0 <= v < world.n_nodes and world.nav[v, OPPOSITE[d]]):
                raise WorldError(f"asymmetric or out-of-grid edge at node {node} dir {DIRS[d]}")
    return world


# -- observation -------------------------------------------------------------

@dataclass(frozen=True)
class Scene:
    subviews: np.ndarray  # (4, 11) in N, E, S, W order
    stop: np.ndarray  # STOP action embedding


def observe_panoramic(env, node: int) -> Scene:
    env.world.check_node(node)
    return Scene(env.subviews(node), np.zeros(FEATURE_DIM))


def observe_front(env, node: int, heading: int) -> np.ndarray:
    env.world.check_node(node)
    if heading not in (N, E, S, W):
        raise WorldError(f"bad heading {heading!r}")
    return env.subviews(node)[heading]


def geodesic(world: World, a: int, b: int) -> int:
    world.check_node(a)
    world.check_node(b)
    d = int(world.distances(a)[b])
    if d < 0:
        raise WorldError(f"nodes {a} and {b} are disconnected")
    return d


# -- paths ------------------------------------------------------------------

@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    actions: tuple[int, ...]  # directions, last one STOP


def path_from_nodes(world: World, nodes: Sequence[int]) -> Path:
    actions = []
    for u, v in zip(nodes, nodes[1:]):
        for d in range(4):
            if world.neighbor(u, d) == v:
                actions.append(d)
                break
        else:
            raise WorldError(f"nodes {u} and {v} are not adjacent")
    return Path(tuple(int(n) for n in nodes), tuple(actions) + (STOP,))


def nodes_from_actions(env, start: int, actions: Sequence[int]) -> list[int]:
    nodes = [start]
    for a in actions:
        if a == STOP:
            break
        nxt = env.neighbor(nodes[-1], a)
        if nxt is None:
            raise WorldError(f"illegal move {DIRS[a]} at node {nodes[-1]}")
        nodes.append(nxt)
    return nodes


def segments(path: Path) -> list[tuple[int, int]]:
    """Maximal constant-direction runs as (direction, end node)."""
    segs: list[tuple[int, int]] = []
    for i, a in enumerate(path.actions[:-1]):
        end = path.nodes[i + 1]
        if segs and segs[-1][0] == a:
            segs[-1] = (a, end)
        else:
            segs.append((a, end))
    return segs


def _min_turn_path(world: World, start: int, goal: int, rng: np.random.Generator) -> list[int]:
    to_goal = world.distances(goal)
    memo: dict[tuple[int, int], int] = {}

    def moves(u):
        return [(d, v) for d in range(4) if (v := world.neighbor(u, d)) is not None and to_goal[v] == to_goal[u] - 1]

    def cost(u, d_in):
        if u == goal:
            return 0
        key = (u, d_in)
        if key not in memo:
            memo[key] = min((d != d_in and d_in >= 0) + cost(v, d) for d, v in moves(u))
        return memo[key]

    nodes, d_in = [start], -1
    while nodes[-1] != goal:
        u = nodes[-1]
        best = cost(u, d_in)
        options = [(d, v) for d, v in moves(u) if (d != d_in and d_in >= 0) + cost(v, d) == best]
        d, v = options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]
        nodes.append(v)
        d_in = d
    return nodes


def sample_path(world: World, seed, min_len: int, max_len: int, max_retries: int = 1000) -> Path:
    """Seeded shortest path (fewest turns) between nodes at geodesic distance in range."""
    if not 1 <= min_len <= max_len <= 10:
        raise WorldError("need 1 <= min_len <= max_len <= 10")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_retries):
        a, b = (int(v) for v in rng.integers(world.n_nodes, size=2))
        if not min_len <= world.distances(a)[b] <= max_len:
            continue
        path = path_from_nodes(world, _min_turn_path(world, a, b, rng))
        if len(segments(path)) <= MAX_SEGMENTS:
            return path
    raise WorldError(f"no node pair with distance in [{min_len}, {max_len}] after {max_retries} retries")


# -- instruction grammar ------------------------------------------------------

def landmark_word(world: World, node: int, facing: int) -> str:
    return LANDMARK_WORDS[int(world.landmarks[node, facing])]


def oracle_instruction(world: World, path: Path) -> tuple[int, ...]:
    """'walk <dir> to the <landmark>' per straight run, joined by 'then', plus a stop clause."""
    segs = segments(path)
    if not segs:
        raise WorldError("oracle instruction needs a path with at least one move")
    words: list[str] = []
    for i, (d, end) in enumerate(segs):
        if i:
            words.append("then")
        words += ["walk", DIR_WORDS[d], "to", "the", landmark_word(world, end, d)]
    d, end = segs[-1]
    words += ["then", "stop", "at", "the", landmark_word(world, end, d)]
    tokens = (BOS,) + tuple(TOKEN_ID[w] for w in words) + (EOS,)
    if len(tokens) > MAX_INSTRUCTION_LEN:
        raise WorldError(f"instruction of {len(tokens)} tokens exceeds {MAX_INSTRUCTION_LEN}")
    return tokens


def detokenize(tokens: Iterable[int]) -> str:
    return " ".join(VOCAB[t] for t in tokens if t not in (BOS, EOS))


def tokenize(text: str) -> tuple[int, ...]:
    try:
        return (BOS,) + tuple(TOKEN_ID[w] for w in text.split()) + (EOS,)
    except KeyError as exc:
        raise WorldError(f"unknown word {exc.args[0]!r}") from exc


# -- datasets ------------------------------------------------------------------

@dataclass(frozen=True)
class Episode:
    world_id: str
    nodes: tuple[int, ...]
    actions: tuple[int, ...]
    instruction: tuple[int, ...] | None
    labeled: bool

    @property
    def path(self) -> Path:
        return Path(self.nodes, self.actions)

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def goal(self) -> int:
        return self.nodes[-1]


@dataclass(frozen=True)
class SplitSpec:
    n_unseen_worlds: int = 2
    n_val_seen: int = 50
    n_val_unseen: int = 50
    min_len: int = 2
    max_len: int = 5


@dataclass
class Datasets:
    labeled: list[Episode]
    unlabeled: list[Episode]
    splits: dict[str, list[Episode]]
    worlds: dict[str, World]
    train_world_ids: list[str]
    unseen_world_ids: list[str]


def make_world_set(seed: int, count: int, width: int, height: int, wall_density: float,
                   min_len: int = 2, max_len: int = 5, min_injectivity: float = 0.95) -> list[World]:
    """``count`` worlds; a world whose grammar is too ambiguous is regenerated."""
    worlds = []
    attempt = 0
    while len(worlds) < count:
        wseed = seed * 10007 + attempt
        attempt += 1
        world = generate_world(wseed, width, height, wall_density, world_id=f"w{seed}-{len(worlds)}")
        if instruction_injectivity(world, wseed, min_len, max_len) >= min_injectivity:
            worlds.append(world)
        if attempt > 100 * count:
            raise WorldError("could not build a world set meeting the injectivity threshold")
    return worlds


def instruction_injectivity(world: World, seed: int, min_len: int, max_len: int, n_paths: int = 40) -> float:
    """Fraction of sampled paths whose instruction no other sampled path from the same start shares."""
    rng = np.random.default_rng([seed, 17])
    paths = [sample_path(world, rng, min_len, max_len) for _ in range(n_paths)]
    keyed = [(p.nodes[0], oracle_instruction(world, p), p.nodes) for p in paths]
    ok = 0
    for start, instr, nodes in keyed:
        clash = any(s == start and i == instr and n != nodes for s, i, n in keyed)
        ok += not clash
    return ok / len(keyed)


def make_datasets(worlds: Sequence[World], seed: int, n_labeled: int, m_unlabeled: int,
                  split: SplitSpec) -> Datasets:
    if split.n_unseen_worlds < 1 or split.n_unseen_worlds >= len(worlds):
        raise WorldError("split must leave at least one train world and one unseen world")
    if n_labeled < 1:
        raise WorldError("labeled partition is empty")
    if split.n_val_seen < 1 or split.n_val_unseen < 1:
        raise WorldError("validation partitions must be non-empty")
    train = list(worlds[: len(worlds) - split.n_unseen_worlds])
    unseen = list(worlds[len(worlds) - split.n_unseen_worlds:])
    rng = np.random.default_rng([seed, 2021])

    def draw(pool, n, labeled, exclude=frozenset()):
        out = []
        guard = 0
        while len(out) < n:
            guard += 1
            if guard > 1000 * max(n, 1):
                raise WorldError("could not draw enough distinct episodes")
            w = pool[int(rng.integers(len(pool)))]
            p = sample_path(w, rng, split.min_len, split.max_len)
            if (w.id, p.nodes[0], p.nodes[-1]) in exclude:
                continue
            instr = oracle_instruction(w, p) if labeled else None
            out.append(Episode(w.id, p.nodes, p.actions, instr, labeled))
        return out

    labeled = draw(train, n_labeled, True)
    unlabeled = draw(train, m_unlabeled, False)
    seen_keys = frozenset((e.world_id, e.start, e.goal) for e in labeled)
    val_seen = draw(train, split.n_val_seen, True, seen_keys)
    val_unseen = draw(unseen, split.n_val_unseen, True)
    return Datasets(labeled, unlabeled, {"val_seen": val_seen, "val_unseen": val_unseen},
                    {w.id: w for w in worlds}, [w.id for w in train], [w.id for w in unseen])


def format_episodes(episodes: Iterable[Episode]) -> str:
    lines = []
    for e in episodes:
        nodes = ",".join(str(n) for n in e.nodes)
        acts = ",".join("STOP" if a == STOP else DIRS[a] for a in e.actions)
        toks = detokenize(e.instruction) if e.instruction is not None else "-"
        lines.append(f"{e.world_id}\t{nodes}\t{acts}\t{toks}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_episodes(text: str, worlds: dict[str, World] | None = None) -> list[Episode]:
    out = []
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 4:
            raise WorldError(f"line {lineno}: expected 4 tab-separated fields")
        wid, nodes_s, acts_s, toks = parts
        try:
            nodes = tuple(int(v) for v in nodes_s.split(","))
            acts = tuple(STOP if a == "STOP" else DIRS.index(a) for a in acts_s.split(","))
        except ValueError as exc:
            raise WorldError(f"line {lineno}: {exc}") from exc
        instr = None if toks == "-" else tokenize(toks)
        if len(acts) != len(nodes) or acts[-1] != STOP:
            raise WorldError(f"line {lineno}: action list must have one entry per node and end in STOP")
        if worlds is not None:
            if wid not in worlds:
                raise WorldError(f"line {lineno}: unknown world {wid!r}")
            if path_from_nodes(worlds[wid], nodes).actions != acts:
                raise WorldError(f"line {lineno}: actions do not match node list")
        out.append(Episode(wid, nodes, acts, instr, instr is not None))
    return out
