"""hmt-extract: corpus directory -> HMTB v1 bundle file."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractionJob, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hmt-extract",
        description="Convert text+image documents into HMTB feature bundles.",
    )
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="corpus directory (one subdirectory per document)")
    parser.add_argument("--out", required=True, help="output .hmtb path")
    parser.add_argument("--section-len", type=int, required=True,
                        help="tokens per section (r)")
    parser.add_argument("--labels", required=True,
                        help="CSV of doc_id,label rows")
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--l-max", type=int, default=8)
    parser.add_argument("--m-max", type=int, default=9)
    parser.add_argument("--text-encoder", default="hashed",
                        help="'hashed' or 'hf:<model-name>'")
    parser.add_argument("--image-encoder", default="hashed",
                        help="'hashed' or 'hf:<model-name>'")
    args = parser.parse_args(argv)

    job = ExtractionJob(
        input_dir=args.input_dir, output_path=args.out,
        section_len=args.section_len, labels_csv=args.labels, dim=args.dim,
        l_max=args.l_max, m_max=args.m_max, text_encoder=args.text_encoder,
        image_encoder=args.image_encoder,
    )
    try:
        report = extract(job)
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    for doc_id, reason in report.skipped:
        print(json.dumps({"skipped": doc_id, "reason": reason}),
              file=sys.stderr)
    for warning in report.warnings:
        print(json.dumps({"warning": warning}), file=sys.stderr)
    print(json.dumps({
        "command": "extract",
        "written": report.written,
        "skipped": len(report.skipped),
        "bytes": report.bytes_written,
        "out": args.out,
        "labels": report.label_map,
    }))
    return 0


if __name__ == "__main__":
    sys.exit(main())
