import numpy as np
import pytest
import torch

from protomix.config import DatasetSpec
from protomix.synthdata import generate_dataset, load_manifest


@pytest.fixture(scope="session")
def small_spec():
    return DatasetSpec(num_identities=20, images_per_identity_per_modality=10,
                       image_height=24, image_width=12, num_body_parts=3,
                       noise_level=0.05, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_spec, tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    manifest = generate_dataset(small_spec, out)
    return load_manifest(manifest)


def finite_difference_grads(fn, inputs, eps=1e-6):
    """Central finite differences of a scalar fn w.r.t. float64 tensors."""
    numerical = []
    for x in inputs:
        flat = x.detach().reshape(-1)
        grad = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(fn(*inputs).detach())
            flat[i] = orig - eps
            fm = float(fn(*inputs).detach())
            flat[i] = orig
            grad[i] = (fp - fm) / (2 * eps)
        numerical.append(grad.reshape(x.shape))
    return numerical


def assert_gradients_match(fn, inputs, rtol=1e-4, eps=1e-6):
    """Analytic (autograd) vs central-difference gradients, float64."""
    for x in inputs:
        assert x.dtype == torch.float64 and x.requires_grad
    out = fn(*inputs)
    analytic = torch.autograd.grad(out, inputs, allow_unused=False)
    numerical = finite_difference_grads(fn, inputs, eps=eps)
    for a, n in zip(analytic, numerical):
        scale = max(float(a.abs().max()), float(n.abs().max()), 1e-8)
        rel = float((a - n).abs().max()) / scale
        assert rel < rtol, f"gradient mismatch: rel err {rel:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
