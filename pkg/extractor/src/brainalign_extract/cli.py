"""Command-line interface: brainalign-extract."""

from __future__ import annotations

import argparse
import sys

from .extract import extract
from .registry import RegistryError, list_models


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="brainalign-extract",
        description="Run registered audio model checkpoints over a stimulus catalog",
    )
    parser.add_argument("--registry", required=True, help="models JSON registry")
    parser.add_argument("--catalog", required=True, help="stimulus catalog JSON")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--model", action="append",
                        help="restrict to these model_ids (default: all)")
    args = parser.parse_args(argv)
    try:
        descriptors = list_models(args.registry)
        if args.model:
            wanted = set(args.model)
            missing = wanted - {d.model_id for d in descriptors}
            if missing:
                raise RegistryError(f"unknown model_ids: {sorted(missing)}")
            descriptors = [d for d in descriptors if d.model_id in wanted]
        if not descriptors:
            print("registry is empty; nothing to extract")
            return 0
        for d in descriptors:
            fragment = extract(d, args.catalog, args.out_dir)
            print(f"extracted {d.model_id} -> {fragment}")
        return 0
    except (RegistryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
