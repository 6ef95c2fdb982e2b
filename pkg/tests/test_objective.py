import math

import numpy as np
import pytest

from docnmt.context import assemble
from docnmt.corpus import MASK_ID, SEP_ID
from docnmt.errors import TrainingDiverged
from docnmt.numerics import Graph, backward
from docnmt.objective import Example, apply_mlm_masking, joint_loss, make_batch

from helpers import random_input, random_target, tiny_model


class TestMasking:
    def test_single_token_forced(self, rng):
        x = assemble([], [9], 512)
        for _ in range(20):
            _, m, o = apply_mlm_masking(x, rng, 50)
            assert m == [0] and o == [9]

    def test_cap(self, rng):
        x = assemble([list(range(6, 50)) * 4], list(range(6, 30)), 512)
        assert len(x) > 200
        for _ in range(500):
            _, m, _ = apply_mlm_masking(x, rng, 50)
            assert 1 <= len(m) <= 20

    def test_never_masks_separator(self, rng):
        x = assemble([[7, 8]], [9, 10], 512)
        sep = x.source_span[0] - 1
        assert x.token_ids[sep] == SEP_ID
        for _ in range(300):
            y, m, _ = apply_mlm_masking(x, rng, 50, rate=0.9)
            assert sep not in m
            assert y.token_ids[sep] == SEP_ID

    def test_layout_untouched_and_originals(self, rng):
        for _ in range(50):
            x = random_input(rng, min_ctx=1)
            y, m, o = apply_mlm_masking(x, rng, 50, rate=0.5)
            assert (y.segment_ids, y.position_ids, y.context_mask, y.source_span) == (
                x.segment_ids, x.position_ids, x.context_mask, x.source_span)
            assert o == [x.token_ids[k] for k in m]
            changed = {i for i in range(len(x)) if y.token_ids[i] != x.token_ids[i]}
            assert changed <= set(m)

    def test_replacement_split(self, rng):
        x = assemble([], list(range(6, 46)), 512)
        mask = rand = same = 0
        for _ in range(2000):
            y, m, o = apply_mlm_masking(x, rng, 50)
            for k, orig in zip(m, o):
                t = y.token_ids[k]
                if t == MASK_ID:
                    mask += 1
                elif t == orig:
                    same += 1
                else:
                    rand += 1
        n = mask + rand + same
        assert abs(mask / n - 0.8) < 0.02
        # random replacement can coincide with the original 1/44 of the time
        assert abs((same + rand) / n - 0.2) < 0.02

    def test_reproducible(self):
        x = assemble([[7, 8, 9]], [10, 11, 12, 13], 512)
        a = apply_mlm_masking(x, np.random.default_rng(3), 50)
        b = apply_mlm_masking(x, np.random.default_rng(3), 50)
        assert a == b

    def test_rate_validation(self, rng):
        with pytest.raises(ValueError):
            apply_mlm_masking(assemble([], [7], 8), rng, 50, rate=0.0)


def _batch(rng, n=4, mlm=True, tgt_vocab=50):
    exs = [Example(random_input(rng, min_ctx=1), random_target(rng, tgt_vocab)) for _ in range(n)]
    return make_batch(exs, rng, 50, mlm=mlm)


class TestJointLoss:
    def test_no_masking_total_is_nll(self, rng):
        m = tiny_model()
        total, nll, mlm = joint_loss(m, _batch(rng, mlm=False))
        assert mlm is None
        assert total is nll

    def test_uniform_logits(self, rng):
        m = tiny_model(tgt_vocab=37)
        m.params["output.weight"].data[:] = 0
        m.params["output.bias"].data[:] = 0
        _, nll, _ = joint_loss(m, _batch(rng, mlm=False, tgt_vocab=37))
        assert float(nll.data) == pytest.approx(math.log(37), abs=1e-12)

    def test_additive(self, rng):
        m = tiny_model()
        for _ in range(20):
            total, nll, mlm = joint_loss(m, _batch(rng))
            assert abs(float(total.data) - (float(nll.data) + float(mlm.data))) < 1e-6

    def test_weighted(self, rng):
        m = tiny_model()
        b = _batch(rng)
        total, nll, mlm = joint_loss(m, b, mlm_weight=0.25)
        assert float(total.data) == pytest.approx(float(nll.data) + 0.25 * float(mlm.data), abs=1e-12)

    def test_gradient_is_sum_of_term_gradients(self, rng):
        m = tiny_model()
        b = _batch(rng)

        def grads(which):
            for p in m.parameters():
                p.grad = None
            with Graph() as g:
                total, nll, mlm = joint_loss(m, b, mlm_weight=0.5)
            backward(g, {"total": total, "nll": nll, "mlm": mlm}[which])
            return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in m.params.items()}

        gt, gn, gm = grads("total"), grads("nll"), grads("mlm")
        for k in gt:
            np.testing.assert_allclose(gt[k], gn[k] + 0.5 * gm[k], atol=1e-10)

    def test_nan_raises(self, rng):
        m = tiny_model()
        m.params["output.bias"].data[3] = np.nan
        with pytest.raises(TrainingDiverged):
            joint_loss(m, _batch(rng))

    def test_mlm_only(self, rng):
        m = tiny_model()
        total, nll, mlm = joint_loss(m, _batch(rng), translation=False)
        assert nll is None and total is mlm
