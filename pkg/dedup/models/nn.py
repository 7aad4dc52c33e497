"""
Neural building blocks shared by the embedding model and the reranker.

Tensors, parameters and reverse-mode gradients come from torch; this module
fixes the layer shapes, initialisation, pooling and the weight file format.
"""

import logging
import math
import random
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from dedup.exceptions import ArtifactError, ModelError
from dedup.utils.container import read_container, read_header, write_container

logger = logging.getLogger(__name__)

AGGREGATIONS = ("avg", "max", "hidden", "concat")
WEIGHTS_VERSION = 1


def set_seed(seed: int) -> None:
    """Seed python, numpy and torch generators."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def aggregation_width(hidden_dim: int, mode: str) -> int:
    """Width of the pooled vector for a biLSTM with ``hidden_dim`` per direction."""
    if mode not in AGGREGATIONS:
        raise ModelError(f"Unknown aggregation '{mode}', expected one of {AGGREGATIONS}")
    return 6 * hidden_dim if mode == "concat" else 2 * hidden_dim


def check_finite(tensor: torch.Tensor, name: str) -> torch.Tensor:
    """Raise if ``tensor`` holds NaN or infinite values."""
    if not torch.isfinite(tensor).all():
        raise ModelError(f"non-finite values in {name}")
    return tensor


def _uniform_(tensor: torch.Tensor, fan_in: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    nn.init.uniform_(tensor, -bound, bound)


class BiLstmLayer(nn.Module):
    """
    Single-layer bidirectional LSTM over padded batches.

    Weights start uniform in ``±1/sqrt(fan_in)``; the forget-gate bias starts
    at 1 and every other bias at 0.
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.lstm = nn.LSTM(input_dim, hidden_dim, num_layers=1, batch_first=True, bidirectional=True)
        self.reset_parameters()

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_dim

    def reset_parameters(self) -> None:
        h = self.hidden_dim
        with torch.no_grad():
            for name, param in self.lstm.named_parameters():
                if name.startswith("weight_ih"):
                    _uniform_(param, self.input_dim)
                elif name.startswith("weight_hh"):
                    _uniform_(param, h)
                elif name.startswith("bias_ih"):
                    # torch gate order: input, forget, cell, output
                    param.zero_()
                    param[h:2 * h].fill_(1.0)
                else:
                    param.zero_()

    def forward(self, inputs: torch.Tensor, lengths: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Run both directions over a padded batch.

        Args:
            inputs: ``[batch, time, input_dim]``
            lengths: ``[batch]`` valid steps per row, all ≥ 1

        Returns:
            Per-step outputs ``[batch, time, 2·hidden]`` (zero at padding) and
            the concatenated final hidden states ``[batch, 2·hidden]``
        """
        if inputs.dim() != 3 or inputs.shape[-1] != self.input_dim:
            raise ModelError(f"BiLstmLayer expects [B, T, {self.input_dim}], got {list(inputs.shape)}")
        if inputs.shape[1] == 0 or int(lengths.min()) < 1:
            raise ModelError("BiLstmLayer received an empty sequence")

        packed = pack_padded_sequence(inputs, lengths.cpu(), batch_first=True, enforce_sorted=False)
        packed_out, (h_n, _) = self.lstm(packed)
        outputs, _ = pad_packed_sequence(packed_out, batch_first=True, total_length=inputs.shape[1])
        # h_n: [2, B, H] forward then backward
        final_hidden = torch.cat([h_n[0], h_n[1]], dim=-1)
        return outputs, final_hidden


def forward_bilstm(layer: BiLstmLayer, inputs: Sequence[torch.Tensor]) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """
    Run a biLSTM over one unbatched sequence.

    Args:
        layer: The layer
        inputs: Non-empty sequence of ``[input_dim]`` vectors

    Returns:
        List of ``[2·hidden]`` outputs and the ``[2·hidden]`` final hidden state
    """
    if len(inputs) == 0:
        raise ModelError("forward_bilstm needs a non-empty sequence")
    batch = torch.stack(list(inputs)).unsqueeze(0)
    lengths = torch.tensor([batch.shape[1]])
    outputs, final_hidden = layer(batch, lengths)
    return list(outputs[0].unbind(0)), final_hidden[0]


def aggregate(outputs: torch.Tensor, lengths: torch.Tensor, final_hidden: torch.Tensor, mode: str) -> torch.Tensor:
    """
    Pool biLSTM outputs into one vector per row.

    Args:
        outputs: ``[batch, time, width]`` with zero padding
        lengths: ``[batch]`` valid steps
        final_hidden: ``[batch, width]``
        mode: ``avg``, ``max``, ``hidden`` or ``concat`` (avg, max, hidden in that order)
    """
    if mode == "hidden":
        return final_hidden
    steps = torch.arange(outputs.shape[1], device=outputs.device)
    mask = (steps[None, :] < lengths.to(outputs.device)[:, None]).unsqueeze(-1)
    denom = lengths.to(outputs.dtype).to(outputs.device).unsqueeze(-1)
    avg = (outputs * mask).sum(dim=1) / denom
    if mode == "avg":
        return avg
    maxed = outputs.masked_fill(~mask, float("-inf")).max(dim=1).values
    if mode == "max":
        return maxed
    if mode == "concat":
        return torch.cat([avg, maxed, final_hidden], dim=-1)
    raise ModelError(f"Unknown aggregation '{mode}'")


class Mlp(nn.Module):
    """Feed-forward stack with rectifier hidden layers and a linear output."""

    def __init__(self, sizes: Sequence[int]):
        super().__init__()
        if len(sizes) < 2:
            raise ModelError("Mlp needs at least input and output sizes")
        self.sizes = list(sizes)
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes, sizes[1:]))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        with torch.no_grad():
            for layer in self.layers:
                _uniform_(layer.weight, layer.in_features)
                layer.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.sizes[0]:
            raise ModelError(f"Mlp expects width {self.sizes[0]}, got {x.shape[-1]}")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.relu(x)
        return x


def backward(loss: torch.Tensor, parameters: Optional[Iterable[nn.Parameter]] = None) -> None:
    """
    Accumulate gradients of a scalar loss into the parameters it depends on.

    Every trainable tensor in ``parameters`` ends with a gradient: those the
    loss does not reach, or all of them for a constant loss, get zeros.
    """
    if loss.dim() != 0 and loss.numel() != 1:
        raise ModelError("backward expects a scalar loss")
    if loss.requires_grad:
        loss.backward()
    for p in parameters or ():
        if p.requires_grad and p.grad is None:
            p.grad = torch.zeros_like(p)


def finite_difference_check(model: nn.Module, loss_fn: Callable[[], torch.Tensor],
                            coordinates: Mapping[str, Sequence[int]], eps: float = 1e-6,
                            rtol: float = 1e-5, atol: float = 1e-7) -> List[Tuple[str, int, float, float]]:
    """
    Compare autograd parameter gradients with central differences.

    Meant for a model cast to float64. Each checked weight is restored
    after its two perturbed evaluations.

    Args:
        model: Module whose parameters are perturbed
        loss_fn: Recomputes the scalar loss from the current weights
        coordinates: Parameter name to flat indices to check
        eps: Perturbation size
        rtol: Relative tolerance
        atol: Absolute floor for gradients near zero

    Returns:
        ``(name, index, autograd, numeric)`` for every coordinate outside tolerance
    """
    params = dict(model.named_parameters())
    unknown = sorted(set(coordinates) - set(params))
    if unknown:
        raise ModelError(f"no parameters named {unknown}")
    model.zero_grad(set_to_none=True)
    backward(loss_fn(), params.values())

    mismatches = []
    with torch.no_grad():
        for name, indices in coordinates.items():
            flat = params[name].view(-1)
            grad = params[name].grad.reshape(-1)
            for index in map(int, indices):
                original = float(flat[index])
                flat[index] = original + eps
                plus = float(loss_fn())
                flat[index] = original - eps
                minus = float(loss_fn())
                flat[index] = original
                numeric = (plus - minus) / (2 * eps)
                analytic = float(grad[index])
                if abs(analytic - numeric) > atol + rtol * max(abs(analytic), abs(numeric)):
                    mismatches.append((name, index, analytic, numeric))
    return mismatches


class Adam:
    """Adaptive-moment optimizer whose step also clears gradients."""

    def __init__(self, params: Iterable[nn.Parameter], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.optimizer = torch.optim.Adam(self.params, lr=lr, betas=betas, eps=eps)

    def step(self) -> None:
        """Apply the bias-corrected update, then zero gradients."""
        self.optimizer.step()
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.grad.zero_()


def adam_step(optimizer: Adam) -> None:
    """One optimizer update followed by gradient reset."""
    optimizer.step()


def save_weights(path: Union[str, Path], model: nn.Module, model_kind: str,
                 hyperparameters: Mapping[str, Any]) -> None:
    """
    Write a model's parameters as named little-endian float32 tensors.

    Args:
        path: Output file
        model: Module whose ``state_dict`` is saved
        model_kind: ``"embedder"`` or ``"reranker"``
        hyperparameters: Everything needed to rebuild the module
    """
    arrays = {
        name: tensor.detach().cpu().to(torch.float32).numpy()
        for name, tensor in model.state_dict().items()
    }
    write_container(path, kind=model_kind,
                    metadata={"model_kind": model_kind, "hyperparameters": dict(hyperparameters)},
                    arrays=arrays, version=WEIGHTS_VERSION)
    logger.info(f"Saved {model_kind} weights ({len(arrays)} tensors) to {path}")


def read_weights(path: Union[str, Path], model_kind: str) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    """Read hyperparameters and tensors from a weight file."""
    metadata, arrays = read_container(path, kind=model_kind, version=WEIGHTS_VERSION)
    tensors = {name: torch.from_numpy(array) for name, array in arrays.items()}
    return metadata["hyperparameters"], tensors


def load_state(model: nn.Module, tensors: Mapping[str, torch.Tensor]) -> None:
    """Copy tensors into ``model``; names and shapes must match exactly."""
    expected = model.state_dict()
    missing = set(expected) - set(tensors)
    extra = set(tensors) - set(expected)
    if missing or extra:
        raise ArtifactError(f"weight names differ: missing={sorted(missing)} unexpected={sorted(extra)}")
    for name, tensor in tensors.items():
        if tuple(expected[name].shape) != tuple(tensor.shape):
            raise ArtifactError(f"shape mismatch for {name}: {list(tensor.shape)} vs {list(expected[name].shape)}")
    model.load_state_dict({k: v.to(expected[k].dtype) for k, v in tensors.items()})


def weights_header(path: Union[str, Path]) -> Dict[str, Any]:
    """Header of a weight file without reading the tensors."""
    header, _ = read_header(path)
    return header
