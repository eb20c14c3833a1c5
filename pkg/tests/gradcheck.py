"""Central finite-difference gradient oracle, independent of autograd."""

import torch


def fd_gradient(loss_fn, tensor: torch.Tensor, eps: float = 1e-6, max_coords: int | None = None):
    """Central-difference gradient of scalar loss_fn() w.r.t. `tensor`.

    Perturbs coordinates in place and restores them. With max_coords set,
    checks an evenly spaced deterministic subset and returns (grad, indices).
    """
    flat = tensor.data.view(-1)
    n = flat.numel()
    if max_coords is None or n <= max_coords:
        indices = range(n)
    else:
        stride = n / max_coords
        indices = sorted({int(i * stride) for i in range(max_coords)})
    grad = torch.zeros(len(list(indices)), dtype=tensor.dtype)
    indices = list(indices)
    for j, i in enumerate(indices):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        grad[j] = (up - down) / (2.0 * eps)
    return grad, indices


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    # Floor the denominator: structurally zero gradients (for instance a bias
    # that cancels inside softmax) otherwise divide round-off by round-off.
    num = (a - b).norm().item()
    den = max(a.norm().item(), b.norm().item(), 1e-3)
    return num / den


def check_gradients(loss_fn, tensors, eps: float = 1e-6, max_coords: int | None = None) -> float:
    """Max relative error between autograd and finite differences.

    loss_fn must rebuild the graph on every call; `tensors` are leaves with
    requires_grad=True.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=False)
    worst = 0.0
    for tensor, analytic in zip(tensors, grads):
        numeric, idx = fd_gradient(loss_fn, tensor, eps=eps, max_coords=max_coords)
        picked = analytic.detach().view(-1)[idx]
        worst = max(worst, relative_error(picked, numeric))
    return worst
