"""Adam with bias correction over a named parameter group.

Moment buffers live on the optimizer and persist across steps, so the whole
optimizer state (first/second moments plus the step counter) can be carried
through the checkpoint archive.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from .autodiff import Tensor


class GradientNaN(RuntimeError):
    """A parameter gradient contained NaN; the step was aborted untouched."""


class Adam:
    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """One in-place update; missing grads count as zero.

        NaN in any gradient aborts before touching any parameter or buffer.
        """
        for name, p in self.params.items():
            if p.grad is not None and np.isnan(p.grad).any():
                raise GradientNaN(f"NaN gradient in parameter '{name}'")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moment buffers and step counter, named for the checkpoint archive."""
        out: Dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        out["opt.step"] = np.asarray(float(self.step_count))
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.m[name] = np.array(arrays[f"opt.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"opt.v.{name}"], dtype=np.float64)
        self.step_count = int(arrays["opt.step"].reshape(-1)[0])
