"""Thin command-line entry for the feature exporter."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportError, ExportJob, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddrf-export",
        description="Dump one network activation site over an image directory as DDRF files",
    )
    parser.add_argument("--model", required=True, help="TorchScript or pickled torch module")
    parser.add_argument("--layer", required=True, help="named-module selector of the activation site")
    parser.add_argument("--in-dir", dest="input_dir", required=True)
    parser.add_argument("--out-dir", dest="output_dir", required=True)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    parser.add_argument("--pooled", action="store_true", help="one pooled DDRF per directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        model_path=args.model,
        layer=args.layer,
        input_dir=args.input_dir,
        output_dir=args.output_dir,
        device=args.device,
        batch_size=args.batch_size,
        pooled=args.pooled,
    )
    try:
        paths = export_features(job)
    except ExportError as exc:
        print(json.dumps({"error": "export", "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"written": [str(p) for p in paths]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
