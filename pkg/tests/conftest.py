import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


def finite_diff_grad(loss_fn, params, eps=1e-3):
    """Central-difference gradients of a scalar loss w.r.t. a list of tensors.

    Independent of autograd: the only interaction with the loss is calling
    it after perturbing parameter entries in place.
    """
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = float(loss_fn())
                flat[i] = orig - eps
                lo = float(loss_fn())
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def autograd_grads(loss_fn, params):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g
            for p, g in zip(params, grads)]


def relative_grad_error(loss_fn, params, eps=1e-3):
    """Norm-based relative error between autograd and central differences."""
    num = finite_diff_grad(loss_fn, params, eps)
    ana = autograd_grads(loss_fn, params)
    num_flat = torch.cat([g.reshape(-1) for g in num])
    ana_flat = torch.cat([g.reshape(-1) for g in ana])
    denom = max(num_flat.norm().item(), ana_flat.norm().item(), 1e-8)
    return (num_flat - ana_flat).norm().item() / denom
