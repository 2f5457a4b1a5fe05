"""Deterministic multi-miner network simulation.

The canonical mode runs a discrete-event loop over a virtual clock: every
miner's attempt is a pure function of its inputs, its duration is the number
of neighbor evaluations divided by the miner's speed factor, and block /
counterexample gossip is delivered after a uniform latency.  Given the same
config and master seed the whole run is bit-reproducible.  A wall-clock mode
with one thread per miner is provided for demonstration.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import queue
import random
import threading
import time
from dataclasses import dataclass, field

from . import chain as chaincore
from . import engine
from .continuous import ContinuousProblem, continuous_problem
from .tsp import TspInstance, TspProblem


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SimConfig:
    problem: engine.SearchProblem
    problem_id: str
    difficulty: engine.DifficultyParams
    miners: int = 3
    blocks: int = 10
    seed: int = 0
    speeds: tuple[float, ...] | None = None   # iterations per virtual second
    speed: float = 1000.0                     # used when speeds is None
    latency_ms: int = 100
    tx_count: int = 4
    tx_size: int = 32
    sample_budget: int = 250
    attempt_budget: int = 5_000_000
    fraud_heights: tuple[int, ...] = ()
    fraud_miner: int = 0
    mode: str = "virtual"

    def speed_of(self, miner: int) -> float:
        if self.speeds is not None:
            return self.speeds[miner]
        return self.speed

    def check(self) -> None:
        if self.miners < 1:
            raise ConfigError("need at least one miner")
        if self.blocks < 1:
            raise ConfigError("block_limit must be >= 1")
        if self.speeds is not None and len(self.speeds) != self.miners:
            raise ConfigError("speeds must list one factor per miner")
        for i in range(self.miners):
            if self.speed_of(i) <= 0:
                raise ConfigError("speed factors must be positive")
        if self.latency_ms < 0:
            raise ConfigError("latency must be >= 0")
        if self.sample_budget < 1:
            raise ConfigError("sample_budget must be >= 1")
        if self.attempt_budget < 1:
            raise ConfigError("attempt_budget must be >= 1")
        if self.mode not in ("virtual", "wall"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.fraud_heights and not isinstance(self.problem, TspProblem):
            raise ConfigError("fraud injection is only wired for TSP runs")
        if not 0 <= self.fraud_miner < self.miners:
            raise ConfigError("fraud_miner out of range")


# -- network events ------------------------------------------------------------

@dataclass(frozen=True)
class MiningStep:
    miner: int
    iterations: int
    time_us: int


@dataclass(frozen=True)
class BlockFound:
    miner: int
    block: chaincore.Block
    attempt: int
    time_us: int


@dataclass(frozen=True)
class BlockDelivered:
    miner: int
    sender: int
    block: chaincore.Block
    time_us: int


@dataclass(frozen=True)
class CounterexampleDelivered:
    miner: int
    block_id: bytes
    theta: object
    time_us: int


@dataclass(frozen=True)
class BlockRecord:
    height: int
    miner: int
    k: int
    block_time_s: float
    pow_value: float
    chain_best: float


@dataclass(frozen=True)
class RejectionRecord:
    time_s: float
    block_id: bytes
    reason: str


@dataclass
class SimResult:
    chain: chaincore.Chain
    chains: list[chaincore.Chain]
    records: list[BlockRecord]
    rejections: list[RejectionRecord]
    injected: list[bytes] = field(default_factory=list)


def derive_rng(master_seed: int, *labels) -> random.Random:
    """Named sub-stream so new consumers never perturb existing ones."""
    material = repr((master_seed,) + labels).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def synthesize_transactions(rng: random.Random,
                            rule: tuple[int, int]) -> tuple[chaincore.Transaction, ...]:
    """Seeded synthetic payloads; a zero count is padded to one."""
    count, size = rule
    count = max(1, count)
    size = max(1, size)
    return tuple(chaincore.Transaction(rng.randbytes(size))
                 for _ in range(count))


def fork_choice(current: chaincore.Chain,
                candidate: chaincore.Chain) -> chaincore.Chain:
    """Longest chain wins; a tie keeps the incumbent (first seen)."""
    if len(candidate.blocks) > len(current.blocks):
        return candidate
    return current


@dataclass
class _Stored:
    block: chaincore.Block
    height: int
    parent: bytes | None
    order: int


class MinerState:
    """One miner's view: a block store, a best tip, and an invalid set."""

    def __init__(self, index: int, genesis: chaincore.Block,
                 params: chaincore.ChainParams):
        self.index = index
        self.params = params
        gid = chaincore.block_id(genesis.header)
        self.genesis_id = gid
        self.blocks: dict[bytes, _Stored] = {
            gid: _Stored(genesis, 0, None, 0)}
        self.tip = gid
        self.invalid: set[bytes] = set()
        self._order = itertools.count(1)
        self.attempts = itertools.count(1)
        self.pending_attempt: int | None = None

    def height_of(self, bid: bytes) -> int:
        return self.blocks[bid].height

    @property
    def tip_height(self) -> int:
        return self.blocks[self.tip].height

    def path(self, bid: bytes) -> list[chaincore.Block]:
        out = []
        cursor: bytes | None = bid
        while cursor is not None:
            stored = self.blocks[cursor]
            out.append(stored.block)
            cursor = stored.parent
        out.reverse()
        return out

    def chain(self) -> chaincore.Chain:
        return chaincore.Chain(self.params, tuple(self.path(self.tip)))

    def add_block(self, block: chaincore.Block, parent: bytes) -> bytes:
        bid = chaincore.block_id(block.header)
        self.blocks[bid] = _Stored(block, self.blocks[parent].height + 1,
                                   parent, next(self._order))
        return bid

    def adopt_if_longer(self, bid: bytes) -> bool:
        """Fork choice: strictly longer wins, a tie keeps the incumbent."""
        if self.blocks[bid].height > self.tip_height:
            self.tip = bid
            return True
        return False

    def expected_k(self, parent: bytes) -> int:
        headers = [b.header for b in self.path(parent)]
        return chaincore.expected_difficulty_k(self.params, headers,
                                               len(headers))

    def handle_counterexample(self, block_id: bytes, theta,
                              problem: engine.SearchProblem) -> bool:
        """Verify a gossiped counterexample and drop the block if it holds.

        Unknown block ids leave the state unchanged.  Returns True when the
        block (and everything extending it) was removed.
        """
        stored = self.blocks.get(block_id)
        if stored is None or stored.block.pow is None:
            return False
        difficulty = self.params.difficulty_at(stored.block.header.difficulty_k)
        if not engine.verify_counterexample(problem, stored.block.pow, theta,
                                            difficulty):
            return False
        doomed = {block_id}
        changed = True
        while changed:
            changed = False
            for bid, entry in self.blocks.items():
                if bid not in doomed and entry.parent in doomed:
                    doomed.add(bid)
                    changed = True
        for bid in doomed:
            del self.blocks[bid]
            self.invalid.add(bid)
        if self.tip not in self.blocks:
            best = max(self.blocks.values(),
                       key=lambda e: (e.height, -e.order))
            self.tip = chaincore.block_id(best.block.header)
        return True


def _assemble_block(parent: chaincore.Block, parent_id: bytes,
                    txs, proof: engine.ProofOfWork, k: int,
                    timestamp_ms: int) -> chaincore.Block:
    header = chaincore.BlockHeader(
        version=chaincore.HEADER_VERSION,
        prev_block_hash=parent_id,
        merkle_root=chaincore.merkle_root(txs),
        timestamp_ms=max(timestamp_ms, parent.header.timestamp_ms),
        difficulty_k=k,
        pow_commitment=chaincore.sha256(proof.theta_star),
    )
    return chaincore.Block(header=header, transactions=tuple(txs), pow=proof)


def _corrupt_tsp_proof(problem: TspProblem, proof: engine.ProofOfWork,
                       difficulty: engine.DifficultyParams) -> engine.ProofOfWork:
    """Swap two same-group cities so the block is provably not a BLM."""
    route = list(problem.decode(proof.theta_star, difficulty))
    k = len(proof.index_set)
    if len(route) - k >= 2:
        a, b = len(route) - 2, len(route) - 1
    elif k >= 2:
        a, b = 0, 1
    else:
        raise ConfigError("instance too small to corrupt a proof")
    route[a], route[b] = route[b], route[a]
    corrupted = tuple(route)
    return engine.ProofOfWork(
        theta_star=problem.encode(corrupted, difficulty),
        objective_value=problem.objective(corrupted),
        index_set=proof.index_set,
    )


def run_simulation(config: SimConfig) -> SimResult:
    """Run the configured mining network and collect metrics.

    Virtual mode is a deterministic event loop; wall mode delegates to the
    threaded runner.  The result's canonical chain is the longest final
    chain (ties keep the lowest miner index).
    """
    config.check()
    if config.mode == "wall":
        return _run_wall(config)

    problem = config.problem
    params = chaincore.ChainParams(config.problem_id, config.difficulty)
    genesis = chaincore.genesis_block(params)
    states = [MinerState(i, genesis, params) for i in range(config.miners)]
    provenance: dict[bytes, int] = {}
    rejections: list[RejectionRecord] = []
    injected: list[bytes] = []
    frauds_done: set[int] = set()
    latency_us = config.latency_ms * 1000

    heap: list = []
    push_seq = itertools.count()

    def push(at_us: int, event) -> None:
        heapq.heappush(heap, (at_us, next(push_seq), event))

    def below_limit(st: MinerState) -> bool:
        return st.tip_height < config.blocks

    def start_attempt(miner: int, at_us: int) -> None:
        st = states[miner]
        parent_id = st.tip
        parent = st.blocks[parent_id].block
        height = st.tip_height + 1
        attempt = next(st.attempts)
        st.pending_attempt = attempt

        txs = synthesize_transactions(
            derive_rng(config.seed, "tx", miner, height, attempt),
            (config.tx_count, config.tx_size))
        root = chaincore.merkle_root(txs)
        seed = chaincore.seed_hash(parent_id, root)
        k = st.expected_k(parent_id)
        difficulty = params.difficulty_at(k)
        warm = None
        if parent.pow is not None:
            parent_difficulty = params.difficulty_at(parent.header.difficulty_k)
            warm = problem.decode(parent.pow.theta_star, parent_difficulty)
        rng = derive_rng(config.seed, "mine", miner, height, attempt)
        try:
            outcome = engine.mine_detailed(problem, seed, difficulty, warm,
                                           config.attempt_budget, rng)
        except engine.Exhausted:
            # burn the attempt's virtual time, then retry with fresh
            # transactions (a new merkle root selects a new subspace)
            wait = _duration_us(config.attempt_budget, config.speed_of(miner))
            push(at_us + wait, ("retry", miner, attempt))
            return

        found_at = at_us + _duration_us(outcome.iterations,
                                        config.speed_of(miner))
        block = _assemble_block(parent, parent_id, txs, outcome.proof, k,
                                found_at // 1000)
        push(found_at, BlockFound(miner, block, attempt, found_at))

    for i in range(config.miners):
        start_attempt(i, 0)

    while heap:
        at_us, _, event = heapq.heappop(heap)
        if isinstance(event, tuple) and event[0] == "retry":
            _, miner, attempt = event
            if (states[miner].pending_attempt == attempt
                    and below_limit(states[miner])):
                start_attempt(miner, at_us)
            continue

        if isinstance(event, BlockFound):
            st = states[event.miner]
            if st.pending_attempt != event.attempt:
                continue  # superseded by an adopted peer block
            st.pending_attempt = None
            block = event.block
            parent_id = block.header.prev_block_hash
            if event.miner == config.fraud_miner and config.fraud_heights:
                height = st.blocks[parent_id].height + 1
                pending = sorted(h for h in config.fraud_heights
                                 if h not in frauds_done and height >= h)
                if pending:
                    # corrupt the first block actually won at/after the
                    # configured height, so injection cannot be raced away
                    frauds_done.add(pending[0])
                    difficulty = params.difficulty_at(block.header.difficulty_k)
                    bad = _corrupt_tsp_proof(problem, block.pow, difficulty)
                    block = _assemble_block(st.blocks[parent_id].block,
                                            parent_id, block.transactions,
                                            bad, block.header.difficulty_k,
                                            block.header.timestamp_ms)
                    injected.append(chaincore.block_id(block.header))
            bid = st.add_block(block, parent_id)
            st.adopt_if_longer(bid)
            provenance[bid] = event.miner
            for peer in range(config.miners):
                if peer != event.miner:
                    push(at_us + latency_us,
                         BlockDelivered(peer, event.miner, block,
                                        at_us + latency_us))
            if below_limit(st):
                start_attempt(event.miner, at_us)
            continue

        if isinstance(event, BlockDelivered):
            st = states[event.miner]
            block = event.block
            bid = chaincore.block_id(block.header)
            if bid in st.invalid or bid in st.blocks:
                continue
            parent_id = block.header.prev_block_hash
            if parent_id not in st.blocks:
                rejections.append(RejectionRecord(at_us / 1e6, bid,
                                                  "unknown parent"))
                continue
            reason = _check_delivered(st, block, parent_id)
            cex = None
            if reason is None:
                seed = chaincore.seed_hash(parent_id,
                                           block.header.merkle_root)
                difficulty = params.difficulty_at(block.header.difficulty_k)
                vrng = derive_rng(config.seed, "validate", event.miner, bid)
                try:
                    cex = engine.validate_pow(problem, seed, block.pow,
                                              difficulty,
                                              config.sample_budget, vrng)
                except engine.PowError as exc:
                    reason = f"pow rejected: {type(exc).__name__}"
            if reason is not None:
                rejections.append(RejectionRecord(at_us / 1e6, bid, reason))
                continue
            if cex is not None:
                rejections.append(RejectionRecord(at_us / 1e6, bid,
                                                  "counterexample"))
                for peer in range(config.miners):
                    if peer != event.miner:
                        push(at_us + latency_us,
                             CounterexampleDelivered(peer, bid, cex.theta,
                                                     at_us + latency_us))
                continue
            st.add_block(block, parent_id)
            if st.adopt_if_longer(bid) and below_limit(st):
                start_attempt(event.miner, at_us)
            continue

        if isinstance(event, CounterexampleDelivered):
            st = states[event.miner]
            if event.block_id in st.invalid:
                continue
            tip_before = st.tip
            if st.handle_counterexample(event.block_id, event.theta, problem):
                rejections.append(RejectionRecord(at_us / 1e6, event.block_id,
                                                  "counterexample gossip"))
                # losing the tip aborts the running attempt and resumes
                # mining from the best remaining block
                if st.tip != tip_before and below_limit(st):
                    start_attempt(event.miner, at_us)
            continue

    chains = [st.chain() for st in states]
    canonical = chains[0]
    for candidate in chains[1:]:
        canonical = fork_choice(canonical, candidate)
    records = _records_from_chain(canonical, provenance, problem)
    return SimResult(chain=canonical, chains=chains, records=records,
                     rejections=rejections, injected=injected)


def _duration_us(iterations: int, speed: float) -> int:
    return max(1, round(iterations * 1_000_000 / speed))


def _check_delivered(st: MinerState, block: chaincore.Block,
                     parent_id: bytes) -> str | None:
    """Header-level checks a recipient runs before the PoW check."""
    hdr = block.header
    parent = st.blocks[parent_id].block
    if hdr.version != chaincore.HEADER_VERSION:
        return "unsupported header version"
    if hdr.timestamp_ms < parent.header.timestamp_ms:
        return "timestamp decreased"
    if not block.transactions:
        return "no transactions"
    if hdr.merkle_root != chaincore.merkle_root(block.transactions):
        return "merkle_root mismatch"
    if hdr.difficulty_k != st.expected_k(parent_id):
        return "difficulty mismatch"
    if block.pow is None:
        return "missing pow"
    if hdr.pow_commitment != chaincore.sha256(block.pow.theta_star):
        return "pow_commitment mismatch"
    return None


def _records_from_chain(chn: chaincore.Chain, provenance: dict[bytes, int],
                        problem: engine.SearchProblem) -> list[BlockRecord]:
    records = []
    best = None
    for height in range(1, len(chn.blocks)):
        block = chn.blocks[height]
        prev = chn.blocks[height - 1]
        bid = chaincore.block_id(block.header)
        value = block.pow.objective_value
        best = value if best is None else min(best, value)
        records.append(BlockRecord(
            height=height,
            miner=provenance.get(bid, -1),
            k=block.header.difficulty_k,
            block_time_s=(block.header.timestamp_ms
                          - prev.header.timestamp_ms) / 1000.0,
            pow_value=value,
            chain_best=best,
        ))
    return records


# -- wall-clock mode ------------------------------------------------------------

def _run_wall(config: SimConfig) -> SimResult:
    """One thread per miner, message passing only, real clocks.

    Demonstration mode: timings depend on the host, so runs are not
    reproducible and the acceptance suite only uses virtual mode.
    """
    problem = config.problem
    params = chaincore.ChainParams(config.problem_id, config.difficulty)
    genesis = chaincore.genesis_block(params)
    states = [MinerState(i, genesis, params) for i in range(config.miners)]
    inboxes: list[queue.Queue] = [queue.Queue() for _ in range(config.miners)]
    stop_all = threading.Event()
    lock = threading.Lock()
    provenance: dict[bytes, int] = {}
    rejections: list[RejectionRecord] = []
    started = time.monotonic()

    def now_ms() -> int:
        return int((time.monotonic() - started) * 1000)

    def broadcast(sender: int, message) -> None:
        for peer in range(config.miners):
            if peer != sender:
                inboxes[peer].put(message)

    def drain(miner: int) -> None:
        st = states[miner]
        while True:
            try:
                kind, payload = inboxes[miner].get_nowait()
            except queue.Empty:
                return
            if kind == "block":
                block = payload
                bid = chaincore.block_id(block.header)
                if bid in st.invalid or bid in st.blocks:
                    continue
                parent_id = block.header.prev_block_hash
                if parent_id not in st.blocks:
                    continue
                reason = _check_delivered(st, block, parent_id)
                cex = None
                if reason is None:
                    seed = chaincore.seed_hash(parent_id,
                                               block.header.merkle_root)
                    difficulty = params.difficulty_at(
                        block.header.difficulty_k)
                    vrng = derive_rng(config.seed, "validate", miner, bid)
                    try:
                        cex = engine.validate_pow(problem, seed, block.pow,
                                                  difficulty,
                                                  config.sample_budget, vrng)
                    except engine.PowError as exc:
                        reason = f"pow rejected: {type(exc).__name__}"
                if reason is not None:
                    with lock:
                        rejections.append(RejectionRecord(
                            now_ms() / 1000.0, bid, reason))
                    continue
                if cex is not None:
                    with lock:
                        rejections.append(RejectionRecord(
                            now_ms() / 1000.0, bid, "counterexample"))
                    broadcast(miner, ("cex", (bid, cex.theta)))
                    continue
                st.add_block(block, parent_id)
                if st.adopt_if_longer(bid) and st.tip_height >= config.blocks:
                    stop_all.set()
            else:
                bid, theta = payload
                st.handle_counterexample(bid, theta, problem)

    def mine_loop(miner: int) -> None:
        st = states[miner]
        while not stop_all.is_set() and st.tip_height < config.blocks:
            drain(miner)
            parent_id = st.tip
            parent = st.blocks[parent_id].block
            height = st.tip_height + 1
            attempt = next(st.attempts)
            txs = synthesize_transactions(
                derive_rng(config.seed, "tx", miner, height, attempt),
                (config.tx_count, config.tx_size))
            seed = chaincore.seed_hash(parent_id, chaincore.merkle_root(txs))
            k = st.expected_k(parent_id)
            difficulty = params.difficulty_at(k)
            warm = None
            if parent.pow is not None:
                warm = problem.decode(
                    parent.pow.theta_star,
                    params.difficulty_at(parent.header.difficulty_k))
            rng = derive_rng(config.seed, "mine", miner, height, attempt)
            stop = lambda: stop_all.is_set() or not inboxes[miner].empty()
            try:
                proof = engine.mine(problem, seed, difficulty, warm,
                                    config.attempt_budget, rng, stop=stop)
            except engine.Aborted:
                continue
            except engine.Exhausted:
                continue
            if st.tip != parent_id:
                continue  # a peer block arrived while assembling
            block = _assemble_block(parent, parent_id, txs, proof, k, now_ms())
            bid = st.add_block(block, parent_id)
            st.adopt_if_longer(bid)
            with lock:
                provenance[bid] = miner
            broadcast(miner, ("block", block))
            if st.tip_height >= config.blocks:
                stop_all.set()
        stop_all.set()

    threads = [threading.Thread(target=mine_loop, args=(i,), daemon=True)
               for i in range(config.miners)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(config.miners):
        drain(i)

    chains = [st.chain() for st in states]
    canonical = chains[0]
    for candidate in chains[1:]:
        canonical = fork_choice(canonical, candidate)
    records = _records_from_chain(canonical, provenance, problem)
    return SimResult(chain=canonical, chains=chains, records=records,
                     rejections=rejections)


# -- config files ----------------------------------------------------------------

def problem_from_spec(spec: dict, root=None) -> tuple[engine.SearchProblem, str]:
    """Build (problem, problem_id) from a config's problem spec."""
    from pathlib import Path

    from .tsp import load_instance

    kind = spec.get("kind")
    if kind == "tsp":
        inst = spec.get("instance")
        if isinstance(inst, str):
            path = Path(inst)
            if root is not None and not path.is_absolute():
                path = Path(root) / path
            instance = load_instance(path)
        elif isinstance(inst, dict):
            instance = TspInstance(
                str(inst.get("name", "inline")),
                tuple((float(x), float(y)) for x, y in inst["cities"]))
        else:
            raise ConfigError("tsp problem needs an 'instance'")
        return TspProblem(instance), f"tsp:{instance.name}"
    if kind == "continuous":
        name = spec.get("name", "demo")
        try:
            problem = continuous_problem(str(name))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return problem, f"continuous:{problem.name}"
    raise ConfigError(f"unknown problem kind {kind!r}")


def config_from_json(obj: dict, root=None) -> SimConfig:
    """Build a SimConfig from a parsed config file."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    try:
        problem, problem_id = problem_from_spec(obj.get("problem", {}), root)
        diff = obj.get("difficulty", {})
        difficulty = engine.DifficultyParams(
            k=int(diff.get("k0", 3)),
            window=int(diff.get("window", 10)),
            low_s=float(diff.get("low_s", 0.5)),
            high_s=float(diff.get("high_s", 2.0)),
            k_min=int(diff.get("k_min", 1)),
            k_max=int(diff.get("k_max", max(1, problem.dimension))),
            t=int(diff.get("t", 5)),
            sig_figs=(None if diff.get("sig_figs") is None
                      else int(diff["sig_figs"])),
            delta=(None if diff.get("delta") is None
                   else float(diff["delta"])),
            delta_min=float(diff.get("delta_min", 1e-6)),
            cert_samples=(None if diff.get("cert_samples") is None
                          else int(diff["cert_samples"])),
            cert_scale=int(diff.get("cert_scale", 40)),
            restart_after=(None if diff.get("restart_after") is None
                           else int(diff["restart_after"])),
            exhaustive_cap=int(diff.get("exhaustive_cap", 20_000)),
        )
        speeds = obj.get("speeds")
        config = SimConfig(
            problem=problem,
            problem_id=problem_id,
            difficulty=difficulty,
            miners=int(obj.get("miners", 3)),
            blocks=int(obj.get("blocks", 10)),
            seed=int(obj.get("seed", 0)),
            speeds=(tuple(float(s) for s in speeds)
                    if isinstance(speeds, list) else None),
            speed=float(obj.get("speed", 1000.0)),
            latency_ms=int(obj.get("latency_ms", 100)),
            tx_count=int(obj.get("tx_count", 4)),
            tx_size=int(obj.get("tx_size", 32)),
            sample_budget=int(obj.get("sample_budget", 250)),
            attempt_budget=int(obj.get("attempt_budget", 5_000_000)),
            fraud_heights=tuple(int(h) for h in obj.get("fraud_heights", [])),
            fraud_miner=int(obj.get("fraud_miner", 0)),
            mode=str(obj.get("mode", "virtual")),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    config.check()
    return config
