"""Two-step normalization checked against a naive two-loop reference."""

import numpy as np
import torch

from shapefill.model import EPS, ModelConfig, ScAdaIn


def naive_reference(x, gamma, beta, gamma_p, beta_p):
    """Loop-based reimplementation of both normalization steps (float64)."""
    B, C, H, W = x.shape
    xbar = np.empty_like(x)
    for b in range(B):
        for c in range(C):
            vals = x[b, c]
            mu = vals.mean()
            sigma = np.sqrt(((vals - mu) ** 2).mean() + EPS)
            xbar[b, c] = (vals - mu) / sigma * gamma[b, c] + beta[b, c]
    out = np.empty_like(x)
    for b in range(B):
        for i in range(H):
            for j in range(W):
                vals = xbar[b, :, i, j]
                mu = vals.mean()
                sigma = np.sqrt(((vals - mu) ** 2).mean() + EPS)
                out[b, :, i, j] = (vals - mu) / sigma * gamma_p[b, :, i, j] + beta_p[b, :, i, j]
    return out


def _module(ch=4, w_dim=6):
    cfg = ModelConfig(image_size=16, num_scales=2, channels=(ch, ch),
                      num_classes=2, z_dim=w_dim // 2, h_dim=w_dim - w_dim // 2)
    return ScAdaIn(cfg, ch).double()


def test_matches_naive_reference_on_random_inputs():
    torch.manual_seed(0)
    mod = _module()
    for _ in range(100):
        x = torch.randn(2, 4, 8, 8, dtype=torch.float64)
        w = torch.randn(2, 6, dtype=torch.float64)
        feat = torch.randn(2, 4, 8, 8, dtype=torch.float64)
        with torch.no_grad():
            out = mod(x, w, feat)
            # modulation heads evaluated as black boxes; the loops reimplement
            # only the normalize-and-affine math
            gamma = mod.style_gamma(w)[:, :, None, None].expand_as(x)
            beta = mod.style_beta(w)[:, :, None, None].expand_as(x)
            hidden = mod.spatial(feat)
            gamma_p = mod.spatial_gamma(hidden)
            beta_p = mod.spatial_beta(hidden)
        expected = naive_reference(x.numpy(), gamma.numpy(), beta.numpy(),
                                   gamma_p.numpy(), beta_p.numpy())
        np.testing.assert_allclose(out.numpy(), expected, atol=1e-10, rtol=0)


def _identity_style(mod):
    torch.nn.init.zeros_(mod.style_gamma.weight)
    torch.nn.init.zeros_(mod.style_beta.weight)
    torch.nn.init.ones_(mod.style_gamma.bias)
    torch.nn.init.zeros_(mod.style_beta.bias)


def _identity_spatial(mod):
    torch.nn.init.zeros_(mod.spatial_gamma.weight)
    torch.nn.init.zeros_(mod.spatial_beta.weight)
    torch.nn.init.ones_(mod.spatial_gamma.bias)
    torch.nn.init.zeros_(mod.spatial_beta.bias)


def test_step1_identity_affine_normalizes_channels():
    torch.manual_seed(1)
    mod = _module()
    _identity_style(mod)
    x = torch.randn(3, 4, 8, 8, dtype=torch.float64) * 2.5 + 1.0
    w = torch.randn(3, 6, dtype=torch.float64)
    with torch.no_grad():
        out = mod.step_channel(x, w)
    mean = out.mean(dim=(2, 3))
    std = out.std(dim=(2, 3), unbiased=False)
    assert mean.abs().max() < 1e-5
    assert (std - 1.0).abs().max() < 1e-4


def test_step2_identity_affine_normalizes_positions():
    torch.manual_seed(2)
    mod = _module()
    _identity_spatial(mod)
    x = torch.randn(3, 4, 8, 8, dtype=torch.float64) * 1.7 - 0.5
    feat = torch.randn(3, 4, 8, 8, dtype=torch.float64)
    with torch.no_grad():
        out = mod.step_position(x, feat)
    mean = out.mean(dim=1)
    std = out.std(dim=1, unbiased=False)
    assert mean.abs().max() < 1e-5
    assert (std - 1.0).abs().max() < 1e-4


def test_constant_input_does_not_crash():
    mod = _module()
    x = torch.zeros(1, 4, 8, 8, dtype=torch.float64)
    w = torch.zeros(1, 6, dtype=torch.float64)
    feat = torch.zeros(1, 4, 8, 8, dtype=torch.float64)
    out = mod(x, w, feat)
    assert torch.isfinite(out).all()
