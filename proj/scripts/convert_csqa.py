#!/usr/bin/env python3
"""Convert CommonsenseQA-format JSONL to the harness's canonical dataset shape.

Input records (one JSON object per line) are expected to look like the
published CSQA splits:

    {"id": "...", "question": {"stem": "...",
                               "choices": [{"label": "A", "text": "..."}, ...]},
     "answerKey": "A"}

A flat variant ({"question": "...", "choices": {"label": [...], "text": [...]},
"answerKey": "..."}) is accepted too. Output records:

    {"id": "...", "question": "...", "options": [...], "golden_index": 0,
     "metadata": {"source": "csqa"}}

Records without an answer key (blind test splits) are skipped with a note.
"""
import argparse
import json
import sys


def convert_record(rec: dict) -> dict | None:
    q = rec.get("question")
    if isinstance(q, dict):  # official CSQA shape
        stem = q["stem"]
        labels = [c["label"] for c in q["choices"]]
        texts = [c["text"] for c in q["choices"]]
    else:  # flat HF-datasets shape
        stem = q
        choices = rec["choices"]
        labels = choices["label"]
        texts = choices["text"]
    key = rec.get("answerKey", "")
    if not key:
        return None
    return {
        "id": str(rec["id"]),
        "question": stem,
        "options": texts,
        "golden_index": labels.index(key),
        "metadata": {"source": "csqa"},
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input", help="CSQA JSONL file")
    ap.add_argument("output", help="canonical JSONL to write")
    args = ap.parse_args()

    converted, skipped = 0, 0
    with open(args.input, encoding="utf-8") as fin, open(args.output, "w", encoding="utf-8") as fout:
        for line_no, line in enumerate(fin, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out = convert_record(json.loads(line))
            except (KeyError, ValueError) as exc:
                print(f"line {line_no}: bad record ({exc})", file=sys.stderr)
                return 1
            if out is None:
                skipped += 1
                continue
            fout.write(json.dumps(out, ensure_ascii=False) + "\n")
            converted += 1
    print(f"converted {converted} records" + (f", skipped {skipped} without answer key" if skipped else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
