"""Extraction of embedded raster page images from PDF files.

Scanned-document PDFs store each page as an image XObject; this walks the
raw object structure and decodes those streams directly (ASCII85, Flate,
DCT filters). Vector-only PDFs yield no images. Images are returned in
object order, which matches page order for the common one-image-per-page
scan layout.
"""

from __future__ import annotations

import base64
import io
import re
import zlib

import numpy as np

from .. import imaging


class PdfError(ValueError):
    pass


_OBJ_RE = re.compile(rb"\d+\s+\d+\s+obj(.*?)endobj", re.S)
# The EOL before `endstream` is optional: some writers end ASCII85 data
# with `~>endstream` directly.
_STREAM_RE = re.compile(rb"stream\r?\n(.*?)(?:\r?\n)?endstream", re.S)
_NUM_KEY = {
    b"Width": re.compile(rb"/Width\s+(\d+)"),
    b"Height": re.compile(rb"/Height\s+(\d+)"),
    b"Bits": re.compile(rb"/BitsPerComponent\s+(\d+)"),
}
_FILTER_RE = re.compile(rb"/Filter\s*(\[[^\]]*\]|/\w+)")
_COLORSPACE_RE = re.compile(rb"/ColorSpace\s*/(\w+)")


def _filters(body: bytes) -> list[bytes]:
    m = _FILTER_RE.search(body)
    if not m:
        return []
    spec = m.group(1)
    return re.findall(rb"/(\w+)", spec)


def _decode_stream(data: bytes, filters: list[bytes]) -> bytes:
    for f in filters:
        if f == b"ASCII85Decode":
            data = base64.a85decode(data.strip(), adobe=True)
        elif f == b"FlateDecode":
            data = zlib.decompress(data)
        elif f == b"DCTDecode":
            return data  # JPEG payload, decoded by PIL below
        else:
            raise PdfError(f"unsupported stream filter {f.decode()}")
    return data


def extract_page_images(pdf_bytes: bytes) -> list[np.ndarray]:
    """Return the embedded raster pages as grayscale arrays, in order.

    Raises PdfError for non-PDF input; returns [] when the PDF contains no
    extractable raster images (e.g. vector-only documents).
    """
    if not pdf_bytes.startswith(b"%PDF"):
        raise PdfError("not a PDF file")
    pages = []
    for obj in _OBJ_RE.finditer(pdf_bytes):
        body = obj.group(1)
        if b"/Subtype" not in body or b"/Image" not in body:
            continue
        stream = _STREAM_RE.search(body)
        if not stream:
            continue
        try:
            dims = {k: int(rx.search(body).group(1)) for k, rx in _NUM_KEY.items()}
        except AttributeError:
            continue
        filters = _filters(body)
        try:
            data = _decode_stream(stream.group(1), filters)
        except (PdfError, ValueError, zlib.error):
            continue
        if b"DCTDecode" in filters:
            from PIL import Image

            with Image.open(io.BytesIO(data)) as im:
                arr = np.asarray(im.convert("RGB"))
            pages.append(imaging.to_grayscale(arr))
            continue
        if dims[b"Bits"] != 8:
            continue
        cs_match = _COLORSPACE_RE.search(body)
        colorspace = cs_match.group(1) if cs_match else b"DeviceGray"
        channels = {b"DeviceGray": 1, b"DeviceRGB": 3}.get(colorspace)
        if channels is None:
            continue
        expected = dims[b"Width"] * dims[b"Height"] * channels
        if len(data) < expected:
            continue
        arr = np.frombuffer(data[:expected], dtype=np.uint8)
        if channels == 3:
            arr = arr.reshape(dims[b"Height"], dims[b"Width"], 3)
            pages.append(imaging.to_grayscale(arr))
        else:
            pages.append(arr.reshape(dims[b"Height"], dims[b"Width"]).copy())
    return pages
