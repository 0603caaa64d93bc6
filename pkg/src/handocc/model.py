"""Occlusion prediction network and the hand-segmentation sub-network.

The occlusion net is a five-block stride-2 encoder and a five-block decoder.
Each decoder block upsamples, optionally applies a global-context block,
merges the matching skip through a detail-enhancement block, and finishes
with a Conv + GroupNorm + LeakyReLU stage. A 1x1 prediction head sits after
every decoder block; heads 1-4 provide deep supervision and the block-5 head
is the network output. Each head's confidence also drives the next block's
detail enhancement, with a dedicated head on the bottleneck seeding block 1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError

CHECKPOINT_VERSION = "1"


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 6
    class_count: int = 3
    encoder_channels: tuple[int, ...] = (16, 32, 64, 96, 128)
    gn_groups: int = 8
    leaky_slope: float = 0.1
    gc_ratio: int = 4
    gc_decoder_blocks: tuple[int, ...] = (1, 2, 3)
    aux_head_blocks: tuple[int, ...] = (1, 2, 3, 4)
    seg_channels: tuple[int, ...] = (8, 16, 32)

    def validate(self) -> None:
        if len(self.encoder_channels) != 5:
            raise ConfigError("encoder_channels must list exactly 5 widths")
        if len(self.seg_channels) != 3:
            raise ConfigError("seg_channels must list exactly 3 widths")
        if self.class_count != 3:
            raise ConfigError("class_count is fixed at 3")
        if self.gc_ratio < 1:
            raise ConfigError("gc_ratio must be >= 1")
        normed = set(self.encoder_channels) | set(self.seg_channels)
        normed |= set(self.decoder_channels())
        for ch in normed:
            if ch % self.gn_groups:
                raise ConfigError(
                    f"gn_groups={self.gn_groups} does not divide channel width {ch}"
                )
        if not set(self.gc_decoder_blocks) <= {1, 2, 3, 4, 5}:
            raise ConfigError("gc_decoder_blocks must be a subset of {1..5}")
        if not set(self.aux_head_blocks) <= {1, 2, 3, 4}:
            raise ConfigError("aux_head_blocks must be a subset of {1..4}")

    def skip_channels(self) -> tuple[int, ...]:
        e = self.encoder_channels
        return (e[3], e[2], e[1], e[0], self.in_channels)

    def decoder_channels(self) -> tuple[int, ...]:
        e = self.encoder_channels
        return (e[3], e[2], e[1], e[0], e[0])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "NetworkConfig":
        kwargs = dict(payload)
        for key in ("encoder_channels", "gc_decoder_blocks", "aux_head_blocks",
                    "seg_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class LogitsPyramid:
    """Per-head class logits: the deep-supervision maps and the final output,
    all upsampled to the input resolution."""

    aux: list[Tensor] = field(default_factory=list)
    final: Tensor | None = None


class ConvBlock(nn.Module):
    """Conv 3x3 -> GroupNorm -> LeakyReLU."""

    def __init__(self, in_ch: int, out_ch: int, cfg: NetworkConfig, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(cfg.gn_groups, out_ch)
        self.act = nn.LeakyReLU(cfg.leaky_slope)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.norm(self.conv(x)))


class GlobalContextBlock(nn.Module):
    """Pool one attention-weighted context vector over all positions and add
    a transformed copy back everywhere. Zeroing the transform's last conv
    makes the block an exact identity."""

    def __init__(self, channels: int, ratio: int = 4):
        super().__init__()
        hidden = max(channels // ratio, 1)
        self.attn = nn.Conv2d(channels, 1, 1)
        self.transform = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.LayerNorm([hidden, 1, 1]),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
        )

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        weights = F.softmax(self.attn(x).view(b, 1, h * w), dim=-1)
        context = torch.bmm(x.view(b, c, h * w), weights.transpose(1, 2))
        return x + self.transform(context.view(b, c, 1, 1))


def confidence_map(logits: Tensor) -> Tensor:
    """Maximum class probability per pixel; ranges over [1/3, 1] for 3 classes."""
    return F.softmax(logits, dim=1).max(dim=1, keepdim=True).values


class DetailEnhanceBlock(nn.Module):
    """Skip-connection merge that up-weights shallow features where the deep
    prediction is unconfident: shallow * (2 - 1.5 * Up(conf)), plus the
    projected deep feature, merged by one 3x3 conv."""

    def __init__(self, low_ch: int, high_ch: int, out_ch: int | None = None):
        super().__init__()
        self.project = nn.Conv2d(high_ch, low_ch, 1)
        self.merge = nn.Conv2d(low_ch, out_ch or low_ch, 3, padding=1)

    @staticmethod
    def _match(x: Tensor, size: tuple[int, int]) -> Tensor:
        if x.shape[-2:] == size:
            return x
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

    def enhance(self, f_low: Tensor, conf: Tensor) -> Tensor:
        """The reweighted shallow feature, before the merge conv."""
        conf = self._match(conf, f_low.shape[-2:])
        return (2.0 - 1.5 * conf) * f_low

    def forward(self, f_low: Tensor, f_high: Tensor, conf: Tensor) -> Tensor:
        high = self._match(self.project(f_high), f_low.shape[-2:])
        return self.merge(self.enhance(f_low, conf) + high)


class OcclusionNet(nn.Module):
    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        cfg.validate()
        self.cfg = cfg
        enc = cfg.encoder_channels
        widths = (cfg.in_channels, *enc)
        self.encoder = nn.ModuleList(
            ConvBlock(widths[i], widths[i + 1], cfg, stride=2) for i in range(5)
        )
        skips = cfg.skip_channels()
        outs = cfg.decoder_channels()
        highs = (enc[4], *outs[:4])
        self.bottleneck_head = nn.Conv2d(enc[4], cfg.class_count, 1)
        self.gc = nn.ModuleList(
            GlobalContextBlock(highs[i], cfg.gc_ratio)
            if (i + 1) in cfg.gc_decoder_blocks else nn.Identity()
            for i in range(5)
        )
        # merge straight to the block width so a narrow skip (the raw input
        # at full resolution) does not throttle the detail path
        self.de = nn.ModuleList(
            DetailEnhanceBlock(skips[i], highs[i], outs[i]) for i in range(5)
        )
        self.decoder = nn.ModuleList(
            ConvBlock(outs[i], outs[i], cfg, stride=1) for i in range(5)
        )
        self.heads = nn.ModuleList(
            nn.Conv2d(outs[i], cfg.class_count, 1) for i in range(5)
        )

    def encode(self, x: Tensor) -> list[Tensor]:
        feats = []
        cur = x
        for block in self.encoder:
            cur = block(cur)
            feats.append(cur)
        return feats

    def forward(self, x: Tensor) -> LogitsPyramid:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        b, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} channels, got {c}")
        if h % 32 or w % 32:
            raise ValueError(f"input {h}x{w} not divisible by 32")
        feats = self.encode(x)
        skips = [feats[3], feats[2], feats[1], feats[0], x]
        deep = feats[4]
        head_logits = self.bottleneck_head(deep)
        pyramid = LogitsPyramid()
        for i in range(5):
            conf = confidence_map(head_logits)
            up = F.interpolate(deep, size=skips[i].shape[-2:], mode="bilinear",
                               align_corners=False)
            up = self.gc[i](up)
            deep = self.decoder[i](self.de[i](skips[i], up, conf))
            head_logits = self.heads[i](deep)
            if (i + 1) in self.cfg.aux_head_blocks:
                pyramid.aux.append(
                    F.interpolate(head_logits, size=(h, w), mode="bilinear",
                                  align_corners=False)
                )
        pyramid.final = head_logits
        return pyramid


class HandSegNet(nn.Module):
    """Small encoder-decoder that scores each pixel as hand foreground."""

    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        cfg.validate()
        self.cfg = cfg
        c1, c2, c3 = cfg.seg_channels
        self.enc1 = ConvBlock(3, c1, cfg, stride=2)
        self.enc2 = ConvBlock(c1, c2, cfg, stride=2)
        self.enc3 = ConvBlock(c2, c3, cfg, stride=2)
        self.dec1 = ConvBlock(c3, c2, cfg, stride=1)
        self.dec2 = ConvBlock(c2, c1, cfg, stride=1)
        self.dec3 = ConvBlock(c1, c1, cfg, stride=1)
        self.head = nn.Conv2d(c1, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"input {h}x{w} not divisible by 8")
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        d1 = self.dec1(F.interpolate(e3, size=e2.shape[-2:], mode="bilinear",
                                     align_corners=False)) + e2
        d2 = self.dec2(F.interpolate(d1, size=e1.shape[-2:], mode="bilinear",
                                     align_corners=False)) + e1
        d3 = self.dec3(F.interpolate(d2, size=(h, w), mode="bilinear",
                                     align_corners=False))
        return torch.sigmoid(self.head(d3)).squeeze(1)


def init_gaussian_(module: nn.Module, std: float = 0.1,
                   seed: int | None = None) -> nn.Module:
    """Draw every conv weight and bias from N(0, std^2); normalization
    layers start at scale 1, shift 0. Deterministic per seed."""
    gen = torch.Generator()
    if seed is not None:
        gen.manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=gen)
                if m.bias is not None:
                    m.bias.normal_(0.0, std, generator=gen)
        elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)
    return module


def build_occlusion_net(cfg: NetworkConfig | None = None,
                        seed: int = 0) -> OcclusionNet:
    net = OcclusionNet(cfg)
    init_gaussian_(net, 0.1, seed)
    return net


def build_seg_net(cfg: NetworkConfig | None = None, seed: int = 0) -> HandSegNet:
    net = HandSegNet(cfg)
    init_gaussian_(net, 0.1, seed)
    return net


def save_checkpoint(path, config: NetworkConfig, occ_state: dict,
                    seg_state: dict, step: int, extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "occ_state": occ_state,
        "seg_state": seg_state,
        "step": int(step),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path, expect_config: NetworkConfig | None = None) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {version!r} unsupported (want {CHECKPOINT_VERSION!r})"
        )
    if expect_config is not None:
        if payload.get("config") != expect_config.to_dict():
            raise ConfigError("checkpoint config does not match the requested config")
    return payload


def nets_from_checkpoint(payload: dict) -> tuple[OcclusionNet, HandSegNet, NetworkConfig]:
    cfg = NetworkConfig.from_dict(payload["config"])
    occ = OcclusionNet(cfg)
    occ.load_state_dict(payload["occ_state"])
    seg = HandSegNet(cfg)
    seg.load_state_dict(payload["seg_state"])
    occ.eval()
    seg.eval()
    return occ, seg, cfg
