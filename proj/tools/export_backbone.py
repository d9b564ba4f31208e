#!/usr/bin/env python3
"""Export a pretrained vision(/text) backbone into the stillact weights
container (.ntc) so the C++ harness can run it offline.

Supported sources (huggingface transformers):
  clip     CLIPModel        e.g. openai/clip-vit-base-patch16
  vit      ViTModel         e.g. google/vit-base-patch16-224
  siglip2  SiglipModel      e.g. google/siglip2-base-patch16-224

Usage:
  python tools/export_backbone.py --kind clip --model openai/clip-vit-base-patch16 \
      --out ~/.cache/stillact/backbones/clip-vit-base-patch16.ntc
"""

import argparse
import json
import struct
import zlib

import numpy as np


# ---------------------------------------------------------------- container

def write_ntc(path, meta, tensors):
    """tensors: list of (name, float32 numpy array)."""
    entries = []
    payload = bytearray()
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "dtype": "f32",
                        "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = {"meta": meta, "tensors": entries,
              "payload_crc32": format(zlib.crc32(bytes(payload)) & 0xFFFFFFFF, "08x")}
    hjson = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(b"NTC1")
        f.write(struct.pack("<B", 1))
        f.write(struct.pack("<Q", len(hjson)))
        f.write(hjson)
        f.write(bytes(payload))


def t2n(t):
    return t.detach().cpu().float().numpy()


# ---------------------------------------------------------------- mappers

def export_vision_blocks(prefix, layers, tensors, *, ln1, attn_q, attn_k, attn_v, attn_o,
                         ln2, fc1, fc2):
    for i, layer in enumerate(layers):
        p = f"{prefix}blocks.{i}."
        for tag, mod in (("ln1.", ln1(layer)), ("ln2.", ln2(layer))):
            tensors.append((p + tag + "gamma", t2n(mod.weight)))
            tensors.append((p + tag + "beta", t2n(mod.bias)))
        for tag, mod in (("attn.q.", attn_q(layer)), ("attn.k.", attn_k(layer)),
                         ("attn.v.", attn_v(layer)), ("attn.out.", attn_o(layer)),
                         ("mlp.fc1.", fc1(layer)), ("mlp.fc2.", fc2(layer))):
            tensors.append((p + tag + "weight", t2n(mod.weight)))
            tensors.append((p + tag + "bias", t2n(mod.bias)))


def export_clip(model_id):
    from transformers import CLIPModel, CLIPTokenizer, CLIPImageProcessor
    model = CLIPModel.from_pretrained(model_id)
    tok = CLIPTokenizer.from_pretrained(model_id)
    proc = CLIPImageProcessor.from_pretrained(model_id)
    return map_clip(model, tok, proc, model_id)


def map_clip(model, tok, proc, model_id):
    v = model.vision_model
    vcfg = model.config.vision_config
    tensors = []
    tensors.append(("vision.patch_embed.weight", t2n(v.embeddings.patch_embedding.weight)))
    pb = v.embeddings.patch_embedding.bias
    tensors.append(("vision.patch_embed.bias",
                    t2n(pb) if pb is not None else np.zeros(vcfg.hidden_size, np.float32)))
    tensors.append(("vision.cls_token", t2n(v.embeddings.class_embedding).reshape(1, -1)))
    tensors.append(("vision.pos_embed", t2n(v.embeddings.position_embedding.weight)))
    tensors.append(("vision.ln_pre.gamma", t2n(v.pre_layrnorm.weight)))
    tensors.append(("vision.ln_pre.beta", t2n(v.pre_layrnorm.bias)))
    export_vision_blocks("vision.", v.encoder.layers, tensors,
                         ln1=lambda l: l.layer_norm1, ln2=lambda l: l.layer_norm2,
                         attn_q=lambda l: l.self_attn.q_proj, attn_k=lambda l: l.self_attn.k_proj,
                         attn_v=lambda l: l.self_attn.v_proj, attn_o=lambda l: l.self_attn.out_proj,
                         fc1=lambda l: l.mlp.fc1, fc2=lambda l: l.mlp.fc2)
    tensors.append(("vision.ln_post.gamma", t2n(v.post_layernorm.weight)))
    tensors.append(("vision.ln_post.beta", t2n(v.post_layernorm.bias)))
    tensors.append(("vision.proj.weight", t2n(model.visual_projection.weight)))
    tensors.append(("vision.proj.bias", np.zeros(model.config.projection_dim, np.float32)))

    t = model.text_model
    tcfg = model.config.text_config
    tensors.append(("text.token_embedding", t2n(t.embeddings.token_embedding.weight)))
    tensors.append(("text.pos_embed", t2n(t.embeddings.position_embedding.weight)))
    export_vision_blocks("text.", t.encoder.layers, tensors,
                         ln1=lambda l: l.layer_norm1, ln2=lambda l: l.layer_norm2,
                         attn_q=lambda l: l.self_attn.q_proj, attn_k=lambda l: l.self_attn.k_proj,
                         attn_v=lambda l: l.self_attn.v_proj, attn_o=lambda l: l.self_attn.out_proj,
                         fc1=lambda l: l.mlp.fc1, fc2=lambda l: l.mlp.fc2)
    tensors.append(("text.ln_final.gamma", t2n(t.final_layer_norm.weight)))
    tensors.append(("text.ln_final.beta", t2n(t.final_layer_norm.bias)))
    tensors.append(("text.proj.weight", t2n(model.text_projection.weight)))
    tensors.append(("text.proj.bias", np.zeros(model.config.projection_dim, np.float32)))

    act = {"quick_gelu": "quick_gelu", "gelu": "gelu",
           "gelu_pytorch_tanh": "gelu_tanh"}[vcfg.hidden_act]
    vocab_map = tok.get_vocab()
    vocab = [None] * len(vocab_map)
    for piece, idx in vocab_map.items():
        vocab[idx] = piece
    if hasattr(tok, "bpe_ranks"):  # slow tokenizer
        merges = [None] * len(tok.bpe_ranks)
        for (a, b), rank in tok.bpe_ranks.items():
            merges[rank] = f"{a} {b}"
    else:  # fast tokenizer: read the serialized backend model
        backend = json.loads(tok._tokenizer.to_str())
        merges = [" ".join(m) if isinstance(m, list) else m
                  for m in backend["model"]["merges"]]
    meta = {
        "schema": "stillact.backbone.v1",
        "kind": "clip",
        "weights_id": model_id,
        "embedding_dim": model.config.projection_dim,
        "vision": {
            "width": vcfg.hidden_size, "layers": vcfg.num_hidden_layers,
            "heads": vcfg.num_attention_heads, "patch_size": vcfg.patch_size,
            "resolution": vcfg.image_size, "mlp_ratio": vcfg.intermediate_size // vcfg.hidden_size,
            "embedding_dim": model.config.projection_dim, "activation": act,
            "pooling": "cls", "ln_pre": True, "projection": True,
            "ln_eps": vcfg.layer_norm_eps,
        },
        "preprocess": {"mean": list(proc.image_mean), "std": list(proc.image_std)},
        "text": {
            "width": tcfg.hidden_size, "layers": tcfg.num_hidden_layers,
            "heads": tcfg.num_attention_heads, "context_length": tcfg.max_position_embeddings,
            "vocab_size": tcfg.vocab_size, "mlp_ratio": tcfg.intermediate_size // tcfg.hidden_size,
            "embedding_dim": model.config.projection_dim, "activation": act,
            "causal": True, "pooling": "eot", "projection": True,
            "ln_eps": tcfg.layer_norm_eps,
        },
        "tokenizer": {
            "scheme": "bpe", "context_length": tcfg.max_position_embeddings,
            "bos_id": tok.bos_token_id, "eos_id": tok.eos_token_id,
            "unk_id": tok.unk_token_id if tok.unk_token_id is not None else -1,
            "vocab": vocab, "merges": merges,
        },
    }
    return meta, tensors


def export_vit(model_id):
    from transformers import ViTModel, ViTImageProcessor
    model = ViTModel.from_pretrained(model_id)
    proc = ViTImageProcessor.from_pretrained(model_id)
    return map_vit(model, proc, model_id)


def map_vit(model, proc, model_id):
    cfg = model.config
    tensors = []
    emb = model.embeddings
    tensors.append(("vision.patch_embed.weight", t2n(emb.patch_embeddings.projection.weight)))
    tensors.append(("vision.patch_embed.bias", t2n(emb.patch_embeddings.projection.bias)))
    tensors.append(("vision.cls_token", t2n(emb.cls_token).reshape(1, -1)))
    tensors.append(("vision.pos_embed", t2n(emb.position_embeddings)[0]))
    if hasattr(model, "layers"):  # transformers >= 5
        export_vision_blocks("vision.", model.layers, tensors,
                             ln1=lambda l: l.layernorm_before, ln2=lambda l: l.layernorm_after,
                             attn_q=lambda l: l.attention.q_proj,
                             attn_k=lambda l: l.attention.k_proj,
                             attn_v=lambda l: l.attention.v_proj,
                             attn_o=lambda l: l.attention.o_proj,
                             fc1=lambda l: l.mlp.fc1, fc2=lambda l: l.mlp.fc2)
    else:
        export_vision_blocks("vision.", model.encoder.layer, tensors,
                             ln1=lambda l: l.layernorm_before, ln2=lambda l: l.layernorm_after,
                             attn_q=lambda l: l.attention.attention.query,
                             attn_k=lambda l: l.attention.attention.key,
                             attn_v=lambda l: l.attention.attention.value,
                             attn_o=lambda l: l.attention.output.dense,
                             fc1=lambda l: l.intermediate.dense, fc2=lambda l: l.output.dense)
    tensors.append(("vision.ln_post.gamma", t2n(model.layernorm.weight)))
    tensors.append(("vision.ln_post.beta", t2n(model.layernorm.bias)))
    meta = {
        "schema": "stillact.backbone.v1",
        "kind": "vit",
        "weights_id": model_id,
        "embedding_dim": cfg.hidden_size,
        "vision": {
            "width": cfg.hidden_size, "layers": cfg.num_hidden_layers,
            "heads": cfg.num_attention_heads, "patch_size": cfg.patch_size,
            "resolution": cfg.image_size, "mlp_ratio": cfg.intermediate_size // cfg.hidden_size,
            "embedding_dim": cfg.hidden_size, "activation": "gelu",
            "pooling": "cls", "ln_pre": False, "projection": False,
            "ln_eps": cfg.layer_norm_eps,
        },
        "preprocess": {"mean": list(proc.image_mean), "std": list(proc.image_std)},
    }
    return meta, tensors


def export_siglip(model_id, kind="siglip2"):
    from transformers import AutoModel, AutoTokenizer, AutoImageProcessor
    model = AutoModel.from_pretrained(model_id)
    tok = AutoTokenizer.from_pretrained(model_id)
    proc = AutoImageProcessor.from_pretrained(model_id)
    return map_siglip(model, tok, proc, model_id, kind)


def map_siglip(model, tok, proc, model_id, kind):
    v = model.vision_model
    vcfg = model.config.vision_config
    width = vcfg.hidden_size
    tensors = []
    tensors.append(("vision.patch_embed.weight", t2n(v.embeddings.patch_embedding.weight)))
    tensors.append(("vision.patch_embed.bias", t2n(v.embeddings.patch_embedding.bias)))
    tensors.append(("vision.pos_embed", t2n(v.embeddings.position_embedding.weight)))
    export_vision_blocks("vision.", v.encoder.layers, tensors,
                         ln1=lambda l: l.layer_norm1, ln2=lambda l: l.layer_norm2,
                         attn_q=lambda l: l.self_attn.q_proj, attn_k=lambda l: l.self_attn.k_proj,
                         attn_v=lambda l: l.self_attn.v_proj, attn_o=lambda l: l.self_attn.out_proj,
                         fc1=lambda l: l.mlp.fc1, fc2=lambda l: l.mlp.fc2)
    tensors.append(("vision.ln_post.gamma", t2n(v.post_layernorm.weight)))
    tensors.append(("vision.ln_post.beta", t2n(v.post_layernorm.bias)))
    # MAP pooling head: probe attention (packed qkv), layernorm, mlp residual
    head = v.head
    tensors.append(("vision.pool.probe", t2n(head.probe).reshape(1, -1)))
    in_w, in_b = t2n(head.attention.in_proj_weight), t2n(head.attention.in_proj_bias)
    for i, tag in enumerate(("q", "k", "v")):
        tensors.append((f"vision.pool.attn.{tag}.weight", in_w[i * width:(i + 1) * width]))
        tensors.append((f"vision.pool.attn.{tag}.bias", in_b[i * width:(i + 1) * width]))
    tensors.append(("vision.pool.attn.out.weight", t2n(head.attention.out_proj.weight)))
    tensors.append(("vision.pool.attn.out.bias", t2n(head.attention.out_proj.bias)))
    tensors.append(("vision.pool.ln.gamma", t2n(head.layernorm.weight)))
    tensors.append(("vision.pool.ln.beta", t2n(head.layernorm.bias)))
    tensors.append(("vision.pool.mlp.fc1.weight", t2n(head.mlp.fc1.weight)))
    tensors.append(("vision.pool.mlp.fc1.bias", t2n(head.mlp.fc1.bias)))
    tensors.append(("vision.pool.mlp.fc2.weight", t2n(head.mlp.fc2.weight)))
    tensors.append(("vision.pool.mlp.fc2.bias", t2n(head.mlp.fc2.bias)))

    t = model.text_model
    tcfg = model.config.text_config
    tensors.append(("text.token_embedding", t2n(t.embeddings.token_embedding.weight)))
    tensors.append(("text.pos_embed", t2n(t.embeddings.position_embedding.weight)))
    export_vision_blocks("text.", t.encoder.layers, tensors,
                         ln1=lambda l: l.layer_norm1, ln2=lambda l: l.layer_norm2,
                         attn_q=lambda l: l.self_attn.q_proj, attn_k=lambda l: l.self_attn.k_proj,
                         attn_v=lambda l: l.self_attn.v_proj, attn_o=lambda l: l.self_attn.out_proj,
                         fc1=lambda l: l.mlp.fc1, fc2=lambda l: l.mlp.fc2)
    tensors.append(("text.ln_final.gamma", t2n(t.final_layer_norm.weight)))
    tensors.append(("text.ln_final.beta", t2n(t.final_layer_norm.bias)))
    tensors.append(("text.proj.weight", t2n(t.head.weight)))
    tensors.append(("text.proj.bias", t2n(t.head.bias)))

    act = {"gelu_pytorch_tanh": "gelu_tanh", "gelu": "gelu"}[vcfg.hidden_act]
    sp = tok.sp_model if hasattr(tok, "sp_model") else tok._tokenizer  # sentencepiece
    vocab = [sp.id_to_piece(i) for i in range(sp.get_piece_size())]
    scores = [sp.get_score(i) for i in range(sp.get_piece_size())]
    meta = {
        "schema": "stillact.backbone.v1",
        "kind": kind,
        "weights_id": model_id,
        "embedding_dim": width,
        "vision": {
            "width": width, "layers": vcfg.num_hidden_layers,
            "heads": vcfg.num_attention_heads, "patch_size": vcfg.patch_size,
            "resolution": vcfg.image_size, "mlp_ratio": vcfg.intermediate_size // width,
            "embedding_dim": width, "activation": act,
            "pooling": "map", "ln_pre": False, "projection": False,
            "ln_eps": vcfg.layer_norm_eps,
        },
        "preprocess": {"mean": list(proc.image_mean), "std": list(proc.image_std)},
        "text": {
            "width": tcfg.hidden_size, "layers": tcfg.num_hidden_layers,
            "heads": tcfg.num_attention_heads, "context_length": tcfg.max_position_embeddings,
            "vocab_size": tcfg.vocab_size,
            "mlp_ratio": tcfg.intermediate_size // tcfg.hidden_size,
            "embedding_dim": tcfg.hidden_size, "activation": act,
            "causal": False, "pooling": "eot", "projection": True,
            "ln_eps": tcfg.layer_norm_eps,
        },
        "tokenizer": {
            "scheme": "unigram", "context_length": tcfg.max_position_embeddings,
            "bos_id": -1, "eos_id": tok.eos_token_id,
            "unk_id": tok.unk_token_id if tok.unk_token_id is not None else 0,
            "vocab": vocab, "scores": scores,
        },
    }
    return meta, tensors


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--kind", required=True, choices=["clip", "vit", "siglip2"])
    ap.add_argument("--model", required=True, help="hub id or local checkpoint path")
    ap.add_argument("--out", required=True, help="output .ntc path")
    args = ap.parse_args()

    if args.kind == "clip":
        meta, tensors = export_clip(args.model)
    elif args.kind == "vit":
        meta, tensors = export_vit(args.model)
    else:
        meta, tensors = export_siglip(args.model)
    write_ntc(args.out, meta, tensors)
    total = sum(int(np.prod(arr.shape)) for _, arr in tensors)
    print(f"wrote {args.out}: {len(tensors)} tensors, {total} parameters")


if __name__ == "__main__":
    main()
