"""Shared fixtures: small forged corpora and a random-spec generator."""

from __future__ import annotations

import random

import pytest

from packer_audit.featurize import FeaturizeParams, build_catalog, build_matrix
from packer_audit.forge import (
    DEFAULT_CERT_OIDS,
    DEFAULT_IMPORT_POOL,
    CorpusSpec,
    ForgeSpec,
    PlantedString,
    build_corpus,
)

REGIME_A_PROFILES = {
    "UB": {
        "include_rich_header": True,
        "planted_strings": [{"text": "QQSV", "region": ".text"}],
        "text_size": [3072, 4096],
        "rdata_size": [512, 1024],
    },
    "PM": {
        "pack_transform": "xor_stream",
        "text_size": [3072, 4096],
        "rdata_size": [512, 1024],
    },
}

REGIME_B_PROFILES = {
    "PB": {
        "pack_transform": "xor_stream",
        "certificate_probability": 1.0,
        "text_size": [3072, 4096],
        "rdata_size": [512, 1024],
    },
    "PM": {
        "pack_transform": "xor_stream",
        "text_size": [3072, 4096],
        "rdata_size": [512, 1024],
    },
}


def make_regime_a_spec(n_per_side: int, seed: int = 5) -> dict:
    return {
        "seed": seed,
        "counts": {"UB": n_per_side, "PM": n_per_side},
        "profiles": REGIME_A_PROFILES,
    }


def make_regime_b_spec(n_per_side: int, seed: int = 6) -> dict:
    return {
        "seed": seed,
        "counts": {"PB": n_per_side, "PM": n_per_side},
        "profiles": REGIME_B_PROFILES,
    }


def random_forge_spec(rng: random.Random) -> ForgeSpec:
    """Arbitrary valid ForgeSpec for round-trip properties."""
    packed = rng.random() < 0.5
    transform = rng.choice(["xor_stream", "byte_stuff_high_entropy"]) if packed else "none"
    rsrc_size = rng.choice([0, 512, 1024])
    strings = []
    if rng.random() < 0.6:
        strings.append(PlantedString("QQSV", ".text"))
    if rng.random() < 0.5:
        strings.append(PlantedString("Setup Wizard", ".rdata"))
    if rsrc_size and rng.random() < 0.5:
        strings.append(PlantedString("VersionInfo", ".rsrc", utf16=True))
    pool = list(DEFAULT_IMPORT_POOL)
    rng.shuffle(pool)
    return ForgeSpec(
        label=rng.choice(["benign", "malicious"]),
        packed=packed,
        include_rich_header=rng.random() < 0.5,
        planted_strings=tuple(strings),
        planted_certificate=DEFAULT_CERT_OIDS if rng.random() < 0.4 else None,
        import_set=tuple(pool[: rng.randint(1, 5)]),
        code_template_seed=rng.getrandbits(32),
        pack_transform=transform,
        seed=rng.getrandbits(32),
        text_size=rng.choice([2048, 3072, 4096]),
        rdata_size=rng.choice([512, 1024]),
        rsrc_size=rsrc_size,
        overlay_extra=rng.choice([0, 0, 512]),
    )


@pytest.fixture(scope="session")
def small_mixed_corpus(tmp_path_factory):
    """24-file corpus covering all four categories, with features built."""
    out = tmp_path_factory.mktemp("mixed_corpus")
    spec = CorpusSpec.from_dict({
        "seed": 33,
        "counts": {"UB": 6, "PB": 6, "UM": 6, "PM": 6},
        "profiles": {
            "UB": {
                "include_rich_header": True,
                "planted_strings": [{"text": "QQSV", "region": ".text"}],
                "text_size": 3072, "rdata_size": 512,
            },
            "PB": {
                "pack_transform": "xor_stream",
                "certificate_probability": 1.0,
                "text_size": 3072, "rdata_size": 512,
            },
            "UM": {
                "planted_strings": [{"text": "Crypt Locker", "region": ".rdata"}],
                "text_size": 3072, "rdata_size": 512, "rsrc_size": 512,
            },
            "PM": {
                "pack_transform": "byte_stuff_high_entropy",
                "text_size": 3072, "rdata_size": 512,
            },
        },
    })
    manifest = build_corpus(spec, out)
    params = FeaturizeParams(df_min=0.02, df_max=0.98, max_per_family=96)
    catalog = build_catalog(manifest, params)
    matrix = build_matrix(manifest, catalog)
    return manifest, catalog, matrix
