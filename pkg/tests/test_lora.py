import numpy as np
import pytest

from lorapair import autodiff as ad
from lorapair.autodiff import Tensor
from lorapair.encoder import EncoderConfig, build_encoder, forward_batch
from lorapair.errors import RankError, StateError, ValidationError
from lorapair.lora import (
    adapter_forward,
    inject_adapters,
    inject_lora,
    match_targets,
    merge,
    trainable_param_report,
    unmerge,
)


def randomise_b(adapter, rng):
    adapter.B.data = rng.normal(size=adapter.B.shape)
    return adapter


class TestInjection:
    def test_fresh_adapter_is_identity(self):
        rng = np.random.default_rng(0)
        W = Tensor(rng.normal(size=(16, 12)))
        a = inject_lora(W, 3, rng=rng)
        x = Tensor(rng.normal(size=(5, 16)))
        assert np.array_equal(adapter_forward(a, x).data, ad.matmul(x, W).data)
        assert np.array_equal(a.B.data, np.zeros((12, 3)))

    def test_init_is_seeded(self):
        W = Tensor(np.ones((8, 8)))
        a1 = inject_lora(W, 2, rng=np.random.default_rng(5))
        a2 = inject_lora(W, 2, rng=np.random.default_rng(5))
        assert np.array_equal(a1.A.data, a2.A.data)
        assert a1.A.data.std() == pytest.approx(0.02, rel=0.5)

    def test_parameter_count(self):
        a = inject_lora(Tensor(np.zeros((64, 64))), 4)
        assert a.num_trainable == 512 == a.A.size + a.B.size
        assert 64 * 64 // a.num_trainable == 8

    @pytest.mark.parametrize("r", [0, 4, 5])
    def test_rank_bounds(self, r):
        with pytest.raises(RankError):
            inject_lora(Tensor(np.zeros((4, 4))), r)

    def test_zero_input_gives_zero(self):
        rng = np.random.default_rng(2)
        a = randomise_b(inject_lora(Tensor(rng.normal(size=(6, 5))), 2, rng=rng), rng)
        assert np.array_equal(adapter_forward(a, Tensor(np.zeros((3, 6)))).data, np.zeros((3, 5)))


class TestMerge:
    def test_zero_delta_merge_is_w0(self):
        W = Tensor(np.random.default_rng(1).normal(size=(6, 6)))
        assert np.array_equal(merge(inject_lora(W, 2)).data, W.data)

    def test_merged_forward_matches(self):
        rng = np.random.default_rng(3)
        a = randomise_b(inject_lora(Tensor(rng.normal(size=(10, 7))), 3, scale=0.5, rng=rng), rng)
        x = Tensor(rng.normal(size=(4, 10)))
        before = adapter_forward(a, x).data
        merged = merge(a)
        assert np.max(np.abs(ad.matmul(x, merged).data - before)) < 1e-12

    def test_state_machine(self):
        rng = np.random.default_rng(4)
        a = randomise_b(inject_lora(Tensor(rng.normal(size=(8, 8))), 2, rng=rng), rng)
        with pytest.raises(StateError):
            unmerge(a, Tensor(np.zeros((8, 8))))
        x = Tensor(rng.normal(size=(3, 8)))
        before = adapter_forward(a, x).data
        A0, B0 = a.A.data.copy(), a.B.data.copy()
        w = merge(a)
        with pytest.raises(StateError):
            merge(a)
        with pytest.raises(StateError):
            adapter_forward(a, x)
        unmerge(a, w)
        assert np.array_equal(adapter_forward(a, x).data, before)
        assert np.array_equal(a.A.data, A0) and np.array_equal(a.B.data, B0)


class TestTargets:
    NAMES = ["layers.0.attn.query", "layers.0.attn.value", "layers.1.attn.query", "head"]

    def test_leaf_and_full_names(self):
        assert match_targets(self.NAMES, ["query"]) == ["layers.0.attn.query", "layers.1.attn.query"]
        assert match_targets(self.NAMES, ["layers.0.attn.value", "head"]) == ["layers.0.attn.value", "head"]

    def test_unknown_target(self):
        with pytest.raises(ValidationError):
            match_targets(self.NAMES, ["key_proj"])


class _Dense:
    def __init__(self, shapes):
        self.params = {n: Tensor(np.zeros(s), name=n) for n, s in shapes.items()}
        self.adapters = {}

    def linear_names(self):
        return list(self.params)


class TestReport:
    def test_single_layer(self):
        m = _Dense({"proj": (64, 64)})
        inject_adapters(m, ["proj"], 4)
        rep = trainable_param_report(m)
        assert rep["trainable_params"] == 512
        assert rep["total_params"] == 4096 + 512

    def test_doubling_rank_doubles_trainable(self):
        counts = []
        for r in (2, 4, 8):
            m = _Dense({"proj": (32, 48)})
            inject_adapters(m, ["proj"], r)
            counts.append(trainable_param_report(m)["trainable_params"])
        assert counts == [2 * 80, 4 * 80, 8 * 80]

    def test_frozen_without_adapters(self):
        rep = trainable_param_report(_Dense({"proj": (8, 8)}))
        assert rep["trainable_params"] == 0
        assert rep["ratio"] == float("inf")

    def test_head_rank_is_clipped(self):
        model = build_encoder(EncoderConfig(vocab_size=64, embed_dim=16, num_heads=2, ffn_dim=32))
        inject_adapters(model, ["query", "head"], 4)
        assert model.adapters["head"].rank == 1
        assert model.adapters["layers.0.attn.query"].rank == 4


def test_fresh_adapters_leave_encoder_logits_unchanged():
    model = build_encoder(EncoderConfig(vocab_size=64, embed_dim=16, num_heads=2, ffn_dim=32, max_seq_len=8))
    pairs = [([1, 2, 3], [4, 5]), ([7], [7, 8, 9, 10])]
    before = forward_batch(model, pairs).logits.data.copy()
    inject_adapters(model, ["query", "key", "value", "output", "up", "down", "head"], 2)
    assert np.array_equal(forward_batch(model, pairs).logits.data, before)
