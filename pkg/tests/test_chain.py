import hashlib

import pytest

from blmchain import chain, engine, simulate, tsp

H = lambda b: hashlib.sha256(b).digest()  # noqa: E731  independent oracle


def tx(payload: bytes) -> chain.Transaction:
    return chain.Transaction(payload)


class TestMerkleRoot:
    def test_empty_list_rejected(self):
        with pytest.raises(chain.EmptyTransactionList):
            chain.merkle_root([])

    def test_single_leaf_is_its_own_root(self):
        assert chain.merkle_root([tx(b"t1")]) == H(b"t1")
        assert chain.merkle_root([tx(b"t1")]).hex() == (
            "628b49d96dcde97a430dd4f597705899e09a968f793491e4b704cae33a40dc02")

    def test_three_leaves_duplicate_odd_node(self):
        # hand-composed with hashlib, independent of merkle_root
        h1, h2, h3 = H(b"t1"), H(b"t2"), H(b"t3")
        expected = H(H(h1 + h2) + H(h3 + h3))
        assert chain.merkle_root([tx(b"t1"), tx(b"t2"), tx(b"t3")]) == expected
        assert expected.hex() == (
            "3610f42ce86fa24f16cffe1dc4323ea25351e79dcaced1253bb0a69166873cf0")

    def test_order_sensitive(self):
        a = chain.merkle_root([tx(b"a"), tx(b"b")])
        b = chain.merkle_root([tx(b"b"), tx(b"a")])
        assert a != b

    def test_two_leaves(self):
        assert chain.merkle_root([tx(b"a"), tx(b"b")]) == H(H(b"a") + H(b"b"))


class TestBlockId:
    def zero_header(self, **overrides):
        fields = dict(version=0, prev_block_hash=chain.ZERO_HASH,
                      merkle_root=chain.ZERO_HASH, timestamp_ms=0,
                      difficulty_k=0, pow_commitment=chain.ZERO_HASH)
        fields.update(overrides)
        return chain.BlockHeader(**fields)

    def test_deterministic(self):
        h = self.zero_header(version=1, timestamp_ms=42, difficulty_k=3)
        assert chain.block_id(h) == chain.block_id(h)

    def test_prev_hash_byte_changes_id(self):
        other = self.zero_header(
            prev_block_hash=b"\x01" + b"\x00" * 31)
        assert chain.block_id(self.zero_header()) != chain.block_id(other)

    def test_all_zero_header_regression_vector(self):
        # layout is version u32le | prev 32 | merkle 32 | ts u64le |
        # k u16le | commitment 32 -> 110 bytes
        assert self.zero_header().serialize() == b"\x00" * 110
        assert chain.block_id(self.zero_header()) == H(b"\x00" * 110)
        assert chain.block_id(self.zero_header()).hex() == (
            "f23391587f1c9fc48eabd1e95f4caf16f585ef09941b7bc24f023d228e81ccd5")

    def test_little_endian_layout(self):
        h = self.zero_header(version=1, timestamp_ms=2, difficulty_k=3)
        raw = h.serialize()
        assert raw[0:4] == (1).to_bytes(4, "little")
        assert raw[68:76] == (2).to_bytes(8, "little")
        assert raw[76:78] == (3).to_bytes(2, "little")


class TestSeedHash:
    def test_matches_plain_sha256(self):
        a, b = H(b"x"), H(b"y")
        assert chain.seed_hash(a, b) == H(a + b)

    def test_zero_zero_regression_vector(self):
        assert chain.seed_hash(chain.ZERO_HASH, chain.ZERO_HASH).hex() == (
            "f5a5fd42d16a20302798ef6ed309979b43003d2320d9f0e8ea9831a92759fb4b")

    def test_transaction_change_moves_seed(self):
        prev = H(b"prev")
        r1 = chain.merkle_root([tx(b"a"), tx(b"b")])
        r2 = chain.merkle_root([tx(b"a"), tx(b"c")])
        assert chain.seed_hash(prev, r1) != chain.seed_hash(prev, r2)


class TestHashBaselineMiner:
    PREV = H(b"baseline-prev")
    ROOT = H(b"baseline-root")

    def test_max_target_takes_nonce_zero(self):
        assert chain.mine_hash_baseline(self.PREV, self.ROOT,
                                        2**256 - 1, 10) == 0

    def test_zero_target_exhausts(self):
        with pytest.raises(engine.Exhausted):
            chain.mine_hash_baseline(self.PREV, self.ROOT, 0, 200)

    def test_found_nonce_recomputes_below_target(self):
        target = 2**240
        nonce = chain.mine_hash_baseline(self.PREV, self.ROOT, target,
                                         500_000)
        digest = H(self.PREV + self.ROOT + nonce.to_bytes(8, "little"))
        assert int.from_bytes(digest, "big") < target
        # smaller nonces must all be above target
        for n in range(0, min(nonce, 50)):
            d = H(self.PREV + self.ROOT + n.to_bytes(8, "little"))
            assert int.from_bytes(d, "big") >= target


def single_miner_chain(n_cities=8, blocks=5, seed=11):
    instance = tsp.generate_instance(n_cities, 21)
    problem = tsp.TspProblem(instance)
    difficulty = engine.DifficultyParams(k=2, window=10, low_s=0.5,
                                         high_s=2.0, k_min=1,
                                         k_max=n_cities - 1, t=3)
    config = simulate.SimConfig(problem=problem,
                                problem_id=f"tsp:{instance.name}",
                                difficulty=difficulty, miners=1,
                                blocks=blocks, seed=seed, speed=5000.0,
                                sample_budget=2000)
    return simulate.run_simulation(config).chain, problem


class TestValidateChain:
    def test_genesis_only_chain_is_valid(self):
        params = chain.ChainParams(
            "tsp:x", engine.DifficultyParams(k=2, t=3, k_max=7))
        chn = chain.Chain(params, (chain.genesis_block(params),))
        instance = tsp.generate_instance(8, 21)
        report = chain.validate_chain(chn, tsp.TspProblem(instance))
        assert report.valid

    def test_simulator_output_revalidates(self):
        chn, problem = single_miner_chain()
        report = chain.validate_chain(chn, problem, validation_budget=2000)
        assert report.valid, report

    def test_mutated_transaction_fails_at_its_height(self):
        chn, problem = single_miner_chain()
        target = chn.blocks[3]
        payload = bytearray(target.transactions[0].payload)
        payload[0] ^= 0xFF
        txs = (chain.Transaction(bytes(payload)),) + target.transactions[1:]
        tampered = chain.Block(target.header, txs, target.pow)
        bad = chain.Chain(chn.params,
                          chn.blocks[:3] + (tampered,) + chn.blocks[4:])
        report = chain.validate_chain(bad, problem)
        assert not report.valid
        assert report.height == 3
        assert "merkle" in report.reason

    def test_mutated_header_breaks_linkage_at_next_height(self):
        chn, problem = single_miner_chain()
        target = chn.blocks[2]
        hdr = chain.BlockHeader(
            version=target.header.version,
            prev_block_hash=target.header.prev_block_hash,
            merkle_root=target.header.merkle_root,
            timestamp_ms=target.header.timestamp_ms + 1,
            difficulty_k=target.header.difficulty_k,
            pow_commitment=target.header.pow_commitment)
        tampered = chain.Block(hdr, target.transactions, target.pow)
        bad = chain.Chain(chn.params,
                          chn.blocks[:2] + (tampered,) + chn.blocks[3:])
        report = chain.validate_chain(bad, problem)
        assert not report.valid
        assert report.height == 3
        assert "prev_block_hash" in report.reason

    def test_wrong_difficulty_detected(self):
        chn, problem = single_miner_chain()
        target = chn.blocks[4]
        hdr = chain.BlockHeader(
            version=target.header.version,
            prev_block_hash=target.header.prev_block_hash,
            merkle_root=target.header.merkle_root,
            timestamp_ms=target.header.timestamp_ms,
            difficulty_k=target.header.difficulty_k + 1,
            pow_commitment=target.header.pow_commitment)
        bad = chain.Chain(chn.params,
                          chn.blocks[:4] + (chain.Block(
                              hdr, target.transactions, target.pow),))
        report = chain.validate_chain(bad, problem)
        assert not report.valid
        assert report.height == 4
        assert "difficulty" in report.reason
