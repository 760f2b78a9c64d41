import numpy as np
import pytest
import torch

from meshfeedback.body import identity_pose, rot6d_to_matrix
from meshfeedback.errors import ConfigurationError
from meshfeedback.losses import (LossWeights, aux_loss, aux_loss_terms, reg_loss,
                                 reg_loss_terms, total_loss, total_loss_terms)

from oracles import aux_loss_oracle, reg_loss_oracle

F64 = torch.float64
UNIT = LossWeights(lambda_2d=1, lambda_3d=1, lambda_pose=1, lambda_shape=1,
                   lambda_pi=1, lambda_uv=1)


def random_pred(rng, k=16, b=10):
    return dict(
        kp=torch.as_tensor(rng.normal(size=(k, 2))),
        j=torch.as_tensor(rng.normal(size=(k, 3))),
        pose=torch.as_tensor(rng.normal(size=(k, 6))),
        shape=torch.as_tensor(rng.normal(size=(b,))))


def call_reg(p, g, w=UNIT, vis=None):
    return reg_loss(p["kp"], p["j"], p["pose"], p["shape"],
                    g["kp"], g["j"], g["pose"], g["shape"], w, visibility=vis)


class TestRegLoss:
    def test_zero_when_equal(self, rng):
        p = random_pred(rng)
        assert float(call_reg(p, p)) == 0.0

    def test_single_joint_offset_formula(self, rng):
        k = 16
        g = random_pred(rng, k=k)
        p = {key: val.clone() for key, val in g.items()}
        d = torch.tensor([0.03, -0.01, 0.02], dtype=F64)
        p["j"][5] += d
        w = LossWeights(lambda_2d=1, lambda_3d=2.5, lambda_pose=1, lambda_shape=1,
                        lambda_pi=0, lambda_uv=0)
        expected = 2.5 * float((d ** 2).sum()) / (3 * k)
        assert abs(float(call_reg(p, g, w)) - expected) < 1e-9

    def test_random_vs_scalar_loop_oracle(self, rng):
        for _ in range(5):
            p, g = random_pred(rng), random_pred(rng)
            w = LossWeights(lambda_2d=rng.uniform(0, 5), lambda_3d=rng.uniform(0, 5),
                            lambda_pose=rng.uniform(0, 5), lambda_shape=rng.uniform(0, 5),
                            lambda_pi=0, lambda_uv=0)
            got = float(call_reg(p, g, w))
            expected = reg_loss_oracle(
                p["kp"].numpy(), p["j"].numpy(),
                rot6d_to_matrix(p["pose"]).numpy(), p["shape"].numpy(),
                g["kp"].numpy(), g["j"].numpy(),
                rot6d_to_matrix(g["pose"]).numpy(), g["shape"].numpy(),
                w.lambda_2d, w.lambda_3d, w.lambda_pose, w.lambda_shape)
            assert abs(got - expected) < 1e-6

    def test_visibility_masks_keypoints(self, rng):
        g = random_pred(rng)
        p = {key: val.clone() for key, val in g.items()}
        p["kp"][3] += 10.0
        vis = torch.ones(16, dtype=F64)
        vis[3] = 0.0
        assert float(call_reg(p, g, vis=vis)) == 0.0
        assert float(call_reg(p, g)) > 0.0

    def test_pose_term_is_rotation_space(self, rng):
        # two different 6D vectors for the same rotation give zero pose loss
        g = random_pred(rng)
        p = {key: val.clone() for key, val in g.items()}
        p["pose"] = p["pose"] * torch.as_tensor(rng.uniform(1.5, 3.0, size=(16, 1)))
        w = LossWeights(lambda_2d=0, lambda_3d=0, lambda_pose=1, lambda_shape=0,
                        lambda_pi=0, lambda_uv=0)
        assert float(call_reg(p, g, w)) < 1e-12

    def test_shape_mismatch(self, rng):
        p, g = random_pred(rng), random_pred(rng, k=12)
        with pytest.raises(ConfigurationError):
            call_reg(p, g)

    def test_nonnegative(self, rng):
        for _ in range(10):
            p, g = random_pred(rng), random_pred(rng)
            assert float(call_reg(p, g)) >= 0.0


class TestAuxLoss:
    def test_background_gt_kills_uv(self, rng):
        logits = torch.as_tensor(rng.normal(size=(7, 6, 6)))
        part = torch.zeros(6, 6, dtype=torch.long)
        terms = aux_loss_terms(logits, part, torch.rand(6, 6, dtype=F64),
                               torch.rand(6, 6, dtype=F64), UNIT)
        assert float(terms["loss_uv"]) == 0.0

    def test_saturated_correct_prediction(self, toy_body, rng):
        n_cls = 5
        part = torch.as_tensor(rng.integers(0, n_cls, size=(8, 8)))
        u = torch.as_tensor(rng.uniform(size=(8, 8)))
        v = torch.as_tensor(rng.uniform(size=(8, 8)))
        logits = torch.full((n_cls + 2, 8, 8), -20.0, dtype=F64)
        for c in range(n_cls):
            logits[c][part == c] = 20.0
        logits[n_cls] = u
        logits[n_cls + 1] = v
        assert float(aux_loss(logits, part, u, v, UNIT)) < 1e-6

    def test_random_vs_scalar_oracle(self, rng):
        for _ in range(3):
            logits = rng.normal(size=(9, 5, 5))
            part = rng.integers(0, 7, size=(5, 5))
            u = rng.uniform(size=(5, 5))
            v = rng.uniform(size=(5, 5))
            w = LossWeights(lambda_pi=0.3, lambda_uv=1.7, lambda_2d=0, lambda_3d=0,
                            lambda_pose=0, lambda_shape=0)
            got = float(aux_loss(torch.as_tensor(logits), torch.as_tensor(part),
                                 torch.as_tensor(u), torch.as_tensor(v), w))
            expected = aux_loss_oracle(logits, part, u, v, 0.3, 1.7)
            assert abs(got - expected) < 1e-6

    def test_resolution_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            aux_loss(torch.zeros(5, 4, 4), torch.zeros(8, 8, dtype=torch.long),
                     torch.zeros(8, 8), torch.zeros(8, 8), UNIT)


class _FakeTrace:
    def __init__(self, preds):
        self.preds = preds
        self.thetas = [None] * len(preds)
        self.keypoints = [p["kp"] for p in preds]
        self.joints = [p["j"] for p in preds]

    def pose6d(self, t):
        return self.preds[t]["pose"]

    def shapes(self, t):
        return self.preds[t]["shape"]


class TestTotalLoss:
    def test_t1_equals_reg(self, rng):
        p, g = random_pred(rng), random_pred(rng)
        trace = _FakeTrace([p])
        total = total_loss(trace, g["kp"], g["j"], g["pose"], g["shape"], UNIT)
        assert abs(float(total) - float(call_reg(p, g))) < 1e-12

    def test_sums_over_iterations(self, rng):
        preds = [random_pred(rng) for _ in range(3)]
        g = random_pred(rng)
        trace = _FakeTrace(preds)
        total = total_loss(trace, g["kp"], g["j"], g["pose"], g["shape"], UNIT)
        expected = sum(float(call_reg(p, g)) for p in preds)
        assert abs(float(total) - expected) < 1e-9

    def test_doubling_weights_doubles(self, rng):
        p, g = random_pred(rng), random_pred(rng)
        trace = _FakeTrace([p])
        one = total_loss(trace, g["kp"], g["j"], g["pose"], g["shape"], UNIT)
        double = LossWeights(lambda_2d=2, lambda_3d=2, lambda_pose=2, lambda_shape=2,
                             lambda_pi=2, lambda_uv=2)
        two = total_loss(trace, g["kp"], g["j"], g["pose"], g["shape"], double)
        assert abs(float(two) - 2 * float(one)) < 1e-9

    def test_aux_toggling_adds_exactly_aux(self, rng):
        p, g = random_pred(rng), random_pred(rng)
        trace = _FakeTrace([p])
        logits = torch.as_tensor(rng.normal(size=(9, 6, 6)))
        part = torch.as_tensor(rng.integers(0, 7, size=(6, 6)))
        u = torch.as_tensor(rng.uniform(size=(6, 6)))
        v = torch.as_tensor(rng.uniform(size=(6, 6)))
        off = total_loss(trace, g["kp"], g["j"], g["pose"], g["shape"], UNIT)
        on = total_loss(trace, g["kp"], g["j"], g["pose"], g["shape"], UNIT,
                        aux_enabled=True, aux_logits=logits, gt_part=part, gt_u=u, gt_v=v)
        aux = aux_loss(logits, part, u, v, UNIT)
        assert abs(float(on) - float(off) - float(aux)) < 1e-9

    def test_aux_enabled_requires_logits(self, rng):
        p, g = random_pred(rng), random_pred(rng)
        with pytest.raises(ConfigurationError):
            total_loss(_FakeTrace([p]), g["kp"], g["j"], g["pose"], g["shape"], UNIT,
                       aux_enabled=True)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(lambda_2d=-1.0)
