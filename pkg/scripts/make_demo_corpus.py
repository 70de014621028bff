#!/usr/bin/env python3
"""Write a small help-desk corpus for demos and load experiments.

The default set is eight handcrafted Markdown articles about a fictional
self-hosted archive, worded so the extractive provider has real sentences to
quote. `--synthetic N` appends N seeded filler documents on top, which is
handy when you want to watch ingestion speed or index size rather than
answer quality.
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

ARTICLES = {
    "getting-started.md": """\
# Getting Started

Welcome to the archive help desk. This guide covers your first deposition
from account creation to a released entry.

## Creating an account

Register with your institutional email address. Accounts are approved
within one business day. Shared group accounts are not permitted; every
depositor needs their own login so that correspondence has a clear owner.

## Your first deposition

Start a new deposition session from the dashboard and pick the experiment
type. The system saves your progress after every page, so you can stop and
resume at any time. A typical first deposition takes about forty minutes.
""",
    "file-formats.md": """\
# Accepted File Formats

The archive accepts coordinate files in mmCIF format. Legacy PDB-format
files are converted on upload, but mmCIF is strongly preferred because it
preserves long chain identifiers and large entry sizes.

## Coordinates

Upload one coordinate file per entry. The file must pass syntax checking
before the session can continue. Compressed uploads (gzip) are unpacked
automatically.

## Experimental data

X-ray depositions require structure factors. NMR depositions require
chemical shifts and restraints. Cryo-EM depositions require the primary map
as a CCP4-format volume.
""",
    "cryoem-maps.md": """\
# Cryo-EM Map Deposition

Cryo-EM entries carry both a model and one or more maps.

## Required maps

The primary map is mandatory. Half maps are required whenever they exist,
because the validation pipeline computes an independent FSC curve from
them. Masks and additional maps such as sharpened or local-resolution
volumes are optional but encouraged.

## Pixel size and orientation

State the calibrated pixel size in angstroms. The deposition interface
displays the map beside the model so you can confirm the hand and origin
before submitting; a flipped hand is the single most common reason a
cryo-EM entry bounces back.
""",
    "validation-reports.md": """\
# Validation Reports

Every deposition receives an automated validation report before release.

## What the report contains

The report summarizes geometric quality, fit to experimental data, and
comparisons against the whole archive. Percentile plots place your entry
among all released entries and among entries of similar resolution.

## Responding to issues

Outliers are not grounds for rejection, but curators may ask you to confirm
that flagged regions are intentional. Revised coordinates can be uploaded
at any point before release, and the report regenerates automatically.
""",
    "release-policies.md": """\
# Release Policies

Entries are released according to the status you select at deposition.

## Release options

Immediate release publishes the entry as soon as curation completes. Hold
until publication keeps the entry private until you notify us of the
journal citation, up to one year. After one year an unpublished hold
expires and the entry moves to release automatically.

## Withdrawals

A deposited entry can be withdrawn before release by the corresponding
depositor. After release, entries are never deleted; corrections are
handled through versioned superseding entries.
""",
    "biocuration.md": """\
# Biocuration

After submission, a curator reviews the entry and prepares it for release.

## What curators check

Curators verify chemical identity of ligands, polymer sequences against
reference databases, and the consistency of metadata such as source
organism and expression system. They also standardize nomenclature so that
searches behave predictably across the archive.

## Correspondence

Curation questions arrive by email from the annotation system. Reply
within three weeks; sessions silent for longer than that are flagged and
may be unlocked for the next depositor on the team.
""",
    "account-security.md": """\
# Account Security

## Passwords and sessions

Passwords must be at least twelve characters. Browser sessions expire
after eight hours of inactivity. The help desk will never ask for your
password by email.

## ORCID linking

Linking an ORCID iD is required for the corresponding depositor and
recommended for all authors. The link is used once at deposition time; the
archive does not write anything to your ORCID record.
""",
    "contact-support.md": """\
# Contacting Support

## Before you write

Check the validation report FAQ and the file-format guide first; the two
of them answer most first-deposition questions within a minute.

## Reaching the help desk

Use the in-application contact form so your message carries the session
identifier. Plain email works too, but expect a round trip asking for the
session id. The desk answers within one business day, Monday to Friday.
""",
}

FILLER_WORDS = (
    "deposition archive entry model coordinate sequence ligand polymer map "
    "resolution validation release curator metadata format upload session "
    "account report percentile geometry restraint shift factor volume chain"
).split()


def synthetic_doc(rng: random.Random, index: int) -> str:
    lines = [f"# Generated Guide {index}", ""]
    for section in range(rng.randint(2, 4)):
        lines.append(f"## Topic {section}")
        lines.append("")
        for _ in range(rng.randint(2, 5)):
            words = rng.choices(FILLER_WORDS, k=rng.randint(40, 90))
            lines.append(" ".join(words) + ".")
            lines.append("")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("dest", type=Path, help="directory to write the corpus into")
    parser.add_argument("--synthetic", type=int, default=0, metavar="N",
                        help="also write N generated filler documents")
    parser.add_argument("--seed", type=int, default=7, help="seed for the filler generator")
    args = parser.parse_args(argv)

    args.dest.mkdir(parents=True, exist_ok=True)
    for name, text in ARTICLES.items():
        (args.dest / name).write_text(text, encoding="utf-8")

    rng = random.Random(args.seed)
    for i in range(args.synthetic):
        (args.dest / f"generated-{i:04d}.md").write_text(synthetic_doc(rng, i), encoding="utf-8")

    total = len(ARTICLES) + args.synthetic
    print(f"wrote {total} documents to {args.dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
