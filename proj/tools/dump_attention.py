#!/usr/bin/env python3
# Copyright 2026 The rankstop Authors
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Dump attention maps and their loss gradients for `rankstop saliency`.

Writes two STNS tensors of shape (layers, heads, seq, seq): the attention
probabilities A and dL/dA. Not part of the C++ build; needs torch and
transformers.

The loss is next-token cross-entropy. `--loss answer` (default) scores only
the answer span; `--loss full` scores every position. Which one a given
analysis wants is a modelling choice, so it is recorded next to the output.
"""

import argparse
import json
import struct

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


def write_stns(path, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"STNS")
        f.write(struct.pack("<B", 1))
        f.write(struct.pack("<I", array.ndim))
        for d in array.shape:
            f.write(struct.pack("<Q", d))
        f.write(array.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", required=True)
    ap.add_argument("--reasoning", required=True, help="file with the reasoning text")
    ap.add_argument("--answer", required=True, help="file with the answer text")
    ap.add_argument("--prompt", default="", help="file with the prompt text")
    ap.add_argument("--terminator", default="</think>")
    ap.add_argument("--loss", choices=["answer", "full"], default="answer")
    ap.add_argument("--out-prefix", required=True)
    args = ap.parse_args()

    read = lambda p: open(p, encoding="utf-8").read() if p else ""
    tok = AutoTokenizer.from_pretrained(args.model)
    model = AutoModelForCausalLM.from_pretrained(
        args.model, attn_implementation="eager", torch_dtype=torch.float32
    )
    model.eval()

    pieces = [read(args.prompt), read(args.reasoning), args.terminator, read(args.answer)]
    ids = []
    starts = []
    for text in pieces:
        starts.append(len(ids))
        ids.extend(tok(text, add_special_tokens=False)["input_ids"])
    # Boundaries in token positions: reasoning start, terminator, answer start, end.
    reasoning_start, terminator, answer_start = starts[1], starts[2], starts[3]
    end = len(ids)
    if terminator + 1 != answer_start:
        print("warning: terminator spans several tokens; using its first token")

    input_ids = torch.tensor([ids])
    out = model(input_ids, output_attentions=True)
    for a in out.attentions:
        a.retain_grad()
    logits = out.logits[0, :-1]
    targets = input_ids[0, 1:]
    losses = torch.nn.functional.cross_entropy(logits, targets, reduction="none")
    if args.loss == "answer":
        losses = losses[answer_start - 1 : end - 1]
    losses.mean().backward()

    attn = torch.stack([a[0] for a in out.attentions]).detach().numpy()
    grad = torch.stack([a.grad[0] for a in out.attentions]).numpy()
    write_stns(args.out_prefix + ".attention.stns", attn)
    write_stns(args.out_prefix + ".gradients.stns", grad)
    meta = {
        "model": args.model,
        "loss": args.loss,
        "boundaries": f"{reasoning_start},{terminator},{answer_start},{end}",
        "shape": list(attn.shape),
    }
    with open(args.out_prefix + ".json", "w") as f:
        json.dump(meta, f, indent=2)
    print(meta["boundaries"])


if __name__ == "__main__":
    main()
