"""Flat CLI: export an image directory, or verify an existing store.

Exit codes: 0 ok, 1 usage error, 2 data problem (failed verification,
nothing exportable), 3 backbone load failure.
"""

import argparse
import json
import sys

from . import __version__
from .backbones import list_backbones
from .errors import BackboneLoadError, UsageError
from .export import ExportSpec, export_features
from .verify import verify_store


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="export.py",
        description="Dump frozen ViT patch features into a feature store",
    )
    parser.add_argument("--version", action="version", version=f"featexport {__version__}")
    parser.add_argument("--images", help="directory of input images")
    parser.add_argument("--backbone", help=f"one of: {', '.join(list_backbones())}")
    parser.add_argument("--out", help="store directory to create")
    parser.add_argument("--crop", type=int, default=None,
                        help="resize shorter side to N, center crop NxN")
    parser.add_argument("--jitter", action="store_true",
                        help="seeded photometric jitter before extraction")
    parser.add_argument("--variants", type=int, default=1,
                        help="extra seeded augmented copies per image "
                             "(ids get a .vN suffix)")
    parser.add_argument("--batch-size", type=int, default=8, dest="batch_size")
    parser.add_argument("--num-classes", type=int, default=21, dest="num_classes",
                        help="recorded in the manifest for downstream training")
    parser.add_argument("--patch-size", type=int, default=None, dest="patch_size",
                        help="cross-checked against the backbone's patch size")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verify-store", dest="verify", default=None, metavar="STORE",
                        help="validate an existing store and exit (no export)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verify is not None:
            report = verify_store(args.verify)
            print(json.dumps(report, indent=2))
            return 0 if report["ok"] else 2
        if not (args.images and args.backbone and args.out):
            raise UsageError("--images, --backbone, and --out are all required")
        spec = ExportSpec(
            image_dir=args.images, backbone=args.backbone, out=args.out,
            crop=args.crop, jitter=args.jitter, variants=args.variants,
            batch_size=args.batch_size, num_classes=args.num_classes,
            patch_size=args.patch_size, seed=args.seed,
        )
        manifest_path = export_features(spec)
        report = verify_store(args.out)
        print(json.dumps({"manifest": manifest_path, **report}, indent=2))
        return 0 if report["ok"] else 2
    except BackboneLoadError as exc:
        print(f"backbone error: {exc}", file=sys.stderr)
        return 3
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
