"""2D multi-label U-Net and its masked Dice loss.

Layout: five encoder blocks at widths w, 2w, 4w, 8w, 16w with 2x max
pooling between them (four downsamplings), a bottleneck at the deepest
resolution, and four decoder blocks that upsample 2x (nearest + 3x3 conv)
and concatenate the matching encoder skip. Every block is
(conv 3x3 -> batch norm -> ReLU) twice; a final 1x1 convolution and
channel-wise sigmoid produce per-voxel probabilities.
"""

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

DICE_EPS = 1e-5
SPATIAL_MULTIPLE = 16  # four 2x downsamplings


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 9
    out_channels: int = 16
    base_width: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1 or self.base_width < 1:
            raise ValueError("in_channels, out_channels and base_width must be >= 1")

    def fingerprint(self):
        """Hash of the structural fields; seed only affects initialization."""
        key = json.dumps(
            {
                "in_channels": self.in_channels,
                "out_channels": self.out_channels,
                "base_width": self.base_width,
            },
            sort_keys=True,
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        widths = [w, 2 * w, 4 * w, 8 * w, 16 * w]
        self.encoders = nn.ModuleList()
        cin = cfg.in_channels
        for cout in widths:
            self.encoders.append(_block(cin, cout))
            cin = cout
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _block(widths[4], widths[4])
        self.up_convs = nn.ModuleList()
        self.decoders = nn.ModuleList()
        cin = widths[4]
        for skip_w in reversed(widths[:4]):
            self.up_convs.append(nn.Conv2d(cin, skip_w, 3, padding=1))
            self.decoders.append(_block(2 * skip_w, skip_w))
            cin = skip_w
        self.head = nn.Conv2d(widths[0], cfg.out_channels, 1)

    def forward(self, x):
        if x.shape[2] % SPATIAL_MULTIPLE or x.shape[3] % SPATIAL_MULTIPLE:
            raise ValueError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by "
                f"{SPATIAL_MULTIPLE}; pad the input first"
            )
        skips = []
        for i, enc in enumerate(self.encoders):
            if i > 0:
                x = self.pool(x)
            x = enc(x)
            skips.append(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.up_convs, self.decoders, reversed(skips[:4])):
            x = up(nn.functional.interpolate(x, scale_factor=2, mode="nearest"))
            x = dec(torch.cat([skip, x], dim=1))
        return torch.sigmoid(self.head(x))


def build_model(cfg):
    """Construct a UNet with weights initialized deterministically from cfg.seed."""
    torch.manual_seed(cfg.seed)
    model = UNet(cfg)
    model.eval()
    return model


def masked_dice_loss(pred, target, loss_mask):
    """Mean over channels of the masked soft Dice loss.

    Per channel c, with sums over batch and space restricted by the mask m:
    L_c = 1 - (2*sum(m*p*g) + eps) / (sum(m*p) + sum(m*g) + eps). Voxels
    with m = 0 contribute nothing, so the loss (and its gradient) is
    invariant to predictions there. A channel whose mask is empty yields
    L_c = 0. Shapes must match exactly; the channel axis is last.
    """
    was_tensor = torch.is_tensor(pred)
    pred = pred if was_tensor else torch.as_tensor(np.asarray(pred))
    target = target if torch.is_tensor(target) else torch.as_tensor(np.asarray(target))
    target = target.to(pred.dtype)
    loss_mask = loss_mask if torch.is_tensor(loss_mask) else torch.as_tensor(np.asarray(loss_mask))
    loss_mask = loss_mask.to(pred.dtype)
    if pred.shape != target.shape or pred.shape != loss_mask.shape:
        raise ValueError(
            f"shape mismatch: pred {tuple(pred.shape)}, target {tuple(target.shape)}, "
            f"mask {tuple(loss_mask.shape)}"
        )
    if pred.ndim < 2:
        raise ValueError("expected at least (spatial..., channels) arrays")
    with torch.no_grad():
        for name, t in (("target", target), ("loss_mask", loss_mask)):
            if not torch.logical_or(t == 0, t == 1).all():
                raise ValueError(f"{name} values must be 0 or 1")
    dims = tuple(range(pred.ndim - 1))
    inter = (loss_mask * pred * target).sum(dim=dims)
    denom = (loss_mask * pred).sum(dim=dims) + (loss_mask * target).sum(dim=dims)
    loss = (1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)).mean()
    return loss if was_tensor else float(loss)


def forward(model, input_slices):
    """Run the network in evaluation mode on a (B, H, W, Cin) array.

    Returns (B, H, W, Cout) probabilities in (0, 1) as float32. H and W
    must already be divisible by 16.
    """
    arr = np.asarray(input_slices, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[3] != model.cfg.in_channels:
        raise ValueError(
            f"expected (B, H, W, {model.cfg.in_channels}) input, got {arr.shape}"
        )
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(arr).permute(0, 3, 1, 2)
        out = model(x).permute(0, 2, 3, 1)
    return out.numpy()


@dataclass
class ModelWeights:
    """Named weight tensors plus the manifest needed to reuse them."""

    config: UNetConfig
    state: dict
    channels: list = None
    epoch: int = None
    val_dice: float = None
    extra: dict = field(default_factory=dict)

    def load_into(self, model):
        if model.cfg.fingerprint() != self.config.fingerprint():
            raise ValueError(
                f"weights fingerprint {self.config.fingerprint()} does not match "
                f"model fingerprint {model.cfg.fingerprint()}"
            )
        model.load_state_dict(self.state)
        return model

    def build(self):
        model = build_model(self.config)
        return self.load_into(model)


def save_weights(weights, path):
    """Checkpoint archive: weights.pt (named tensors) + manifest.json."""
    manifest = {
        "fingerprint": weights.config.fingerprint(),
        "config": {
            "in_channels": weights.config.in_channels,
            "out_channels": weights.config.out_channels,
            "base_width": weights.config.base_width,
            "seed": weights.config.seed,
        },
        "channels": weights.channels,
        "epoch": weights.epoch,
        "val_dice": weights.val_dice,
        **weights.extra,
    }
    buf = io.BytesIO()
    torch.save(weights.state, buf)
    with zipfile.ZipFile(path, "w") as z:
        z.writestr("manifest.json", json.dumps(manifest, indent=1))
        z.writestr("weights.pt", buf.getvalue())


def load_weights(path):
    with zipfile.ZipFile(path) as z:
        manifest = json.loads(z.read("manifest.json"))
        state = torch.load(io.BytesIO(z.read("weights.pt")), weights_only=True)
    cfg = UNetConfig(**manifest["config"])
    if cfg.fingerprint() != manifest["fingerprint"]:
        raise ValueError(f"checkpoint {path} manifest fingerprint mismatch")
    known = {"fingerprint", "config", "channels", "epoch", "val_dice"}
    extra = {k: v for k, v in manifest.items() if k not in known}
    return ModelWeights(
        config=cfg,
        state=state,
        channels=manifest.get("channels"),
        epoch=manifest.get("epoch"),
        val_dice=manifest.get("val_dice"),
        extra=extra,
    )
