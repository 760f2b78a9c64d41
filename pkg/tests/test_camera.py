import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from meshfeedback.camera import CameraParams, from_pixel, project, to_pixel
from meshfeedback.errors import ConfigurationError

F64 = torch.float64


def t(*vals):
    return torch.tensor(vals, dtype=F64)


class TestProject:
    def test_unit_scale_drops_z(self):
        out = project(t(0.3, -0.2, 5.0).reshape(1, 3), t(1.0, 0.0, 0.0))
        assert torch.allclose(out, t(0.3, -0.2).reshape(1, 2))

    def test_scale_and_shift_independent_of_z(self):
        cam = t(2.0, 0.1, -0.1)
        for z in (0.0, -3.0, 7.5):
            out = project(t(0.5, 0.5, z).reshape(1, 3), cam)
            assert torch.allclose(out, t(1.1, 0.9).reshape(1, 2), atol=1e-12)

    def test_translation_equivariance(self, rng):
        pts = torch.as_tensor(rng.normal(size=(10, 3)))
        cam = t(0.8, 0.05, -0.02)
        delta = 0.123
        shifted = project(pts, cam + t(0.0, delta, 0.0))
        assert torch.allclose(shifted - project(pts, cam),
                              t(delta, 0.0).expand(10, 2), atol=1e-12)

    def test_linear_in_scale(self, rng):
        pts = torch.as_tensor(rng.normal(size=(6, 3)))
        base = project(pts, t(1.0, 0.0, 0.0))
        doubled = project(pts, t(2.0, 0.0, 0.0))
        assert torch.allclose(doubled, 2 * base, atol=1e-12)

    def test_batched(self, rng):
        pts = torch.as_tensor(rng.normal(size=(4, 10, 3)))
        cams = torch.as_tensor(rng.uniform(0.5, 1.5, size=(4, 3)))
        out = project(pts, cams)
        for i in range(4):
            assert torch.allclose(out[i], project(pts[i], cams[i]))

    def test_bad_camera(self):
        with pytest.raises(ConfigurationError):
            project(torch.zeros(3, 3, dtype=F64), torch.zeros(2, dtype=F64))


class TestToPixel:
    def test_corner_is_outer_edge(self):
        out = to_pixel(t(-1.0, -1.0).reshape(1, 2), 56, 56)
        assert torch.allclose(out, t(-0.5, -0.5).reshape(1, 2))

    def test_center(self):
        out = to_pixel(t(0.0, 0.0).reshape(1, 2), 56, 56)
        assert torch.allclose(out, t(27.5, 27.5).reshape(1, 2))

    def test_round_trip_inverse(self, rng):
        pts = torch.as_tensor(rng.uniform(-1.5, 1.5, size=(50, 2)))
        back = from_pixel(to_pixel(pts, 37, 41), 37, 41)
        assert (back - pts).abs().max() < 1e-7

    def test_no_clamping(self):
        out = to_pixel(t(3.0, -3.0).reshape(1, 2), 10, 10)
        assert out[0, 0] > 10 and out[0, 1] < -0.5

    def test_degenerate_size(self):
        with pytest.raises(ConfigurationError):
            to_pixel(torch.zeros(1, 2, dtype=F64), 0, 10)


class TestCameraParams:
    def test_tensor_round_trip(self):
        cam = CameraParams(scale=1.5, tx=0.1, ty=-0.2)
        back = CameraParams.from_tensor(cam.tensor())
        assert back == cam


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-10, 10))
def test_projection_affine_identity(s, tx, ty, x, y, z):
    out = project(torch.tensor([[x, y, z]], dtype=F64), torch.tensor([s, tx, ty], dtype=F64))
    assert abs(out[0, 0].item() - (s * x + tx)) < 1e-12
    assert abs(out[0, 1].item() - (s * y + ty)) < 1e-12
