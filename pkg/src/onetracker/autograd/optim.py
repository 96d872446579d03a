"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


@dataclass
class AdamWState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    step_count: int = 0
    first_moment: dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: dict[int, np.ndarray] = field(default_factory=dict)


class AdamW:
    """AdamW over one or more parameter groups.

    ``groups`` is a flat list of parameters or a list of ``(params, lr)``
    pairs (``lr=None`` uses the default). ``lr_scale`` multiplies every
    group's rate, for step decay. Frozen parameters are skipped entirely
    and get no moment buffers.
    """

    def __init__(self, groups, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        if groups and isinstance(groups[0], Parameter):
            groups = [(groups, None)]
        self.groups: list[tuple[list[Parameter], float]] = [
            (list(ps), float(lr if group_lr is None else group_lr)) for ps, group_lr in groups]
        self.lr_scale = 1.0
        self.state = AdamWState(learning_rate=lr, beta1=betas[0], beta2=betas[1],
                                epsilon=eps, weight_decay=weight_decay)
        for p in self.trainable():
            self.state.first_moment[id(p)] = np.zeros_like(p.data)
            self.state.second_moment[id(p)] = np.zeros_like(p.data)

    def trainable(self) -> list[Parameter]:
        return [p for ps, _ in self.groups for p in ps if not p.frozen]

    def zero_grad(self) -> None:
        for ps, _ in self.groups:
            for p in ps:
                p.grad = None

    def step(self) -> None:
        st = self.state
        for p in self.trainable():
            if p.grad is None:
                raise RuntimeError(f"AdamW: trainable parameter {p.name or tuple(p.shape)} has no gradient")
        st.step_count += 1
        t = st.step_count
        bc1 = 1.0 - st.beta1 ** t
        bc2 = 1.0 - st.beta2 ** t
        for params, group_lr in self.groups:
            lr = group_lr * self.lr_scale
            for p in params:
                if p.frozen:
                    continue
                if lr == 0.0:
                    continue
                m = st.first_moment[id(p)]
                v = st.second_moment[id(p)]
                g = p.grad
                m *= st.beta1
                m += (1.0 - st.beta1) * g
                v *= st.beta2
                v += (1.0 - st.beta2) * g * g
                update = (m / bc1) / (np.sqrt(v / bc2) + st.epsilon)
                if st.weight_decay:
                    p.data = p.data * (1.0 - lr * st.weight_decay)
                p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)
