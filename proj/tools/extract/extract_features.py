#!/usr/bin/env python3
"""Fill a selcon feature cache for the records listed in records.json.

Backends:
  random  seeded Gaussian features with the real grid and widths; exercises the
          file contract without model weights.
  models  DINO ViT-S/16 patch tokens, last-layer CLS attention, and CLIP ViT-B/16
          patch tokens with the final block rewritten (no residual, query-query
          attention, no MLP). Needs torch and transformers plus the weights.

Ground-truth heatmaps that are not PGM files are converted into `gt/{id}` cache
entries and the records file is rewritten to point at them.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

IMAGE_SIZE = 224
PATCH = 16
GRID = IMAGE_SIZE // PATCH
DINO_DIM = 384
CLIP_DIM = 512


def action_prompt(action):
    return f"an item to {action}" if action.endswith("with") else f"an item to {action} with"


def entity_prompt(action):
    return f"a person {action} an item"


class CacheWriter:
    def __init__(self):
        self.entries = {}
        self.chunks = []
        self.offset = 0

    def put(self, name, array):
        a = np.ascontiguousarray(array, dtype="<f4")
        if name in self.entries:
            raise ValueError(f"duplicate cache entry {name}")
        self.entries[name] = {"shape": list(a.shape), "dtype": "float32", "offset": self.offset}
        self.chunks.append(a.tobytes())
        self.offset += a.nbytes

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "payload.bin"), "wb") as f:
            for c in self.chunks:
                f.write(c)
        manifest = {
            "format": "selcon-feature-cache",
            "version": 1,
            "payload": "payload.bin",
            "payload_bytes": self.offset,
            "entries": self.entries,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1)
            f.write("\n")


class RandomBackend:
    def __init__(self, seed):
        self.seed = seed

    def _rng(self, key):
        digest = hashlib.sha256(f"{self.seed}/{key}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def image(self, path):
        rng = self._rng(path)
        dino = rng.standard_normal((GRID, GRID, DINO_DIM))
        clip = rng.standard_normal((GRID, GRID, CLIP_DIM))
        attn = rng.random((GRID, GRID))
        return dino, clip, attn

    def text(self, prompt):
        v = self._rng("text/" + prompt).standard_normal(CLIP_DIM)
        return v / np.linalg.norm(v)


class ModelBackend:
    def __init__(self, device):
        import torch
        from transformers import CLIPModel, CLIPTokenizer, ViTModel

        self.torch = torch
        self.device = device
        self.dino = ViTModel.from_pretrained("facebook/dino-vits16", add_pooling_layer=False).to(device).eval()
        self.clip = CLIPModel.from_pretrained("openai/clip-vit-base-patch16").to(device).eval()
        self.tokenizer = CLIPTokenizer.from_pretrained("openai/clip-vit-base-patch16")
        self.mean_dino = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
        self.std_dino = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)
        self.mean_clip = torch.tensor([0.48145466, 0.4578275, 0.40821073]).view(3, 1, 1)
        self.std_clip = torch.tensor([0.26862954, 0.26130258, 0.27577711]).view(3, 1, 1)

    def _load(self, path):
        from PIL import Image

        img = Image.open(path).convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BICUBIC)
        return self.torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0).permute(2, 0, 1)

    def _clip_patches(self, pixels):
        torch = self.torch
        vision = self.clip.vision_model
        h = vision.embeddings(pixels)
        h = vision.pre_layrnorm(h)
        layers = vision.encoder.layers
        for layer in layers[:-1]:
            h = layer(h, None, None)[0]
        last = layers[-1]
        x = last.layer_norm1(h)
        attn = last.self_attn
        b, n, d = x.shape
        heads = attn.num_heads
        q = attn.q_proj(x).view(b, n, heads, d // heads).transpose(1, 2)
        v = attn.v_proj(x).view(b, n, heads, d // heads).transpose(1, 2)
        w = torch.softmax(q @ q.transpose(-1, -2) * attn.scale, dim=-1)
        out = (w @ v).transpose(1, 2).reshape(b, n, d)
        out = attn.out_proj(out)
        out = vision.post_layernorm(out)
        out = self.clip.visual_projection(out)
        return out[0, 1:].reshape(GRID, GRID, -1)

    def image(self, path):
        torch = self.torch
        rgb = self._load(path)
        with torch.no_grad():
            px = ((rgb - self.mean_dino) / self.std_dino).unsqueeze(0).to(self.device)
            out = self.dino(pixel_values=px, output_attentions=True, interpolate_pos_encoding=True)
            dino = out.last_hidden_state[0, 1:].reshape(GRID, GRID, -1)
            attn = out.attentions[-1][0, :, 0, 1:].mean(0).reshape(GRID, GRID)
            pc = ((rgb - self.mean_clip) / self.std_clip).unsqueeze(0).to(self.device)
            clip = self._clip_patches(pc)
        return dino.cpu().numpy(), clip.cpu().numpy(), attn.cpu().numpy()

    def text(self, prompt):
        torch = self.torch
        tokens = self.tokenizer([prompt], padding=True, return_tensors="pt").to(self.device)
        with torch.no_grad():
            v = self.clip.get_text_features(**tokens)[0]
        v = v / v.norm()
        return v.cpu().numpy()


def load_gt(path):
    from PIL import Image

    g = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
    return g


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--records", required=True)
    ap.add_argument("--out", required=True, help="cache directory")
    ap.add_argument("--backend", choices=["random", "models"], default="models")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args(argv)

    with open(args.records) as f:
        records = json.load(f)

    backend = RandomBackend(args.seed) if args.backend == "random" else ModelBackend(args.device)
    cache = CacheWriter()

    for action in records["actions"]:
        cache.put(f"text/{action}/action", backend.text(action_prompt(action)))
        cache.put(f"text/{action}/entity", backend.text(entity_prompt(action)))

    rewritten = False
    for r in records["records"]:
        rid = r["id"]
        dino, clip, attn = backend.image(r["ego_image"])
        cache.put(f"ego/{rid}/dino", dino)
        cache.put(f"ego/{rid}/clip", clip)
        cache.put(f"ego/{rid}/attn", attn)
        for e, path in enumerate(r["exo_images"][: r["exo_count"]]):
            dino, clip, _ = backend.image(path)
            cache.put(f"exo/{rid}/{e}/dino", dino)
            cache.put(f"exo/{rid}/{e}/clip", clip)
        gt = r.get("gt", "")
        if gt and not gt.startswith("gt/") and not gt.lower().endswith(".pgm"):
            cache.put(f"gt/{rid}", load_gt(gt))
            r["gt"] = f"gt/{rid}"
            rewritten = True

    cache.save(args.out)
    if rewritten:
        with open(args.records, "w") as f:
            json.dump(records, f, indent=1)
            f.write("\n")
    print(f"wrote {len(cache.entries)} entries to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
