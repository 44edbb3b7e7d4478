"""Command line for turning raw inputs into embedding files.

    embed images --dir memes/ --out kb.emb --manifest kb_rows.jsonl --checkpoint hashproj-16
    embed texts  --input ocr.jsonl --out texts.emb --manifest text_rows.jsonl --checkpoint hashproj-16
    embed selftest --out-dir /tmp/check

Images inside --dir are taken in sorted name order; --list overrides with
an explicit newline-separated path list, preserving its order.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .encoders import EncoderConfig, EncoderError
from .pipeline import embed_images, embed_texts, read_text_inputs

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".gif", ".bmp", ".webp"}


def _image_list(args) -> list[Path]:
    if args.list:
        with open(args.list, "r", encoding="utf-8") as fh:
            return [Path(line.strip()) for line in fh if line.strip()]
    root = Path(args.dir)
    if not root.is_dir():
        raise OSError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_images(args) -> int:
    config = EncoderConfig(args.checkpoint, batch_size=args.batch_size, device=args.device)
    rows = embed_images(_image_list(args), config, args.out, args.manifest)
    ok = sum(1 for r in rows if r.status == "ok")
    skipped = len(rows) - ok
    print(f"embedded {ok} images ({skipped} skipped) with {args.checkpoint} -> {args.out}")
    return 0


def cmd_texts(args) -> int:
    config = EncoderConfig(args.checkpoint, batch_size=args.batch_size, device=args.device)
    rows = embed_texts(read_text_inputs(args.input), config, args.out, args.manifest)
    truncated = sum(1 for r in rows if r.truncated)
    print(f"embedded {len(rows)} texts ({truncated} truncated) with {args.checkpoint} -> {args.out}")
    return 0


def cmd_selftest(args) -> int:
    """Generate a small synthetic fixture and embed it end to end."""
    from PIL import Image, ImageDraw

    out_dir = Path(args.out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i in range(10):
        img = Image.new("RGB", (48, 48), (20 * i, 128, 255 - 20 * i))
        draw = ImageDraw.Draw(img)
        draw.rectangle([4 + 2 * i, 4, 20 + 2 * i, 40], fill=(255, 255, 255))
        img.save(img_dir / f"img{i:02d}.png")
    texts_path = out_dir / "texts.jsonl"
    with open(texts_path, "w", encoding="utf-8") as fh:
        for i in range(10):
            fh.write('{"id": "t%02d", "text": "sample meme caption number %d"}\n' % (i, i))

    config = EncoderConfig(args.checkpoint)
    image_rows = embed_images(
        sorted(img_dir.iterdir()), config, out_dir / "images.emb", out_dir / "image_rows.jsonl"
    )
    text_rows = embed_texts(
        read_text_inputs(texts_path), config, out_dir / "texts.emb", out_dir / "text_rows.jsonl"
    )
    assert all(r.status == "ok" for r in image_rows + text_rows)
    print(f"selftest wrote {len(image_rows)} image rows and {len(text_rows)} text rows in {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"meme-embed {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("images", help="embed an image folder or list")
    p.add_argument("--dir", help="folder of images (sorted name order)")
    p.add_argument("--list", help="newline-separated image paths, in order")
    p.add_argument("--out", required=True, help="output .emb file")
    p.add_argument("--manifest", required=True, help="output row manifest JSONL")
    p.add_argument("--checkpoint", required=True, help="encoder id, e.g. hashproj-16 or clip:<model>")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_images)

    p = sub.add_parser("texts", help="embed OCR/about texts")
    p.add_argument("--input", required=True, help="JSONL with id/text, or plain lines")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_texts)

    p = sub.add_parser("selftest", help="embed a generated fixture end to end")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint", default="hashproj-16")
    p.set_defaults(func=cmd_selftest)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.subcommand == "images" and not (args.dir or args.list):
        print("error: images needs --dir or --list", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (EncoderError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
