"""Protein data model, a fixed-column PDB reader and the canonical JSON format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import geom

AA_CODES = "ACDEFGHIKLMNPQRSTVWY"
UNKNOWN_ID = 20
MASK_ID = 21
N_AA = 21  # 20 canonical + X; MASK never appears in stored proteins

THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
    "UNK": "X",
}
ONE_TO_THREE = {v: k for k, v in THREE_TO_ONE.items()}
ONE_TO_ID = {c: i for i, c in enumerate(AA_CODES)}
ONE_TO_ID["X"] = UNKNOWN_ID
ID_TO_ONE = {i: c for c, i in ONE_TO_ID.items()}
ID_TO_ONE[MASK_ID] = "<mask>"

BACKBONE_ATOMS = ("N", "CA", "C", "O")
JSON_FORMAT = 1


class ProteinError(ValueError):
    pass


class SchemaError(ProteinError):
    def __init__(self, pointer, message):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class MalformedLine(ProteinError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MissingBackboneAtom(ProteinError):
    def __init__(self, chain, res_seq, atom):
        super().__init__(f"chain {chain!r} residue {res_seq}: missing {atom}")
        self.chain = chain
        self.res_seq = res_seq


class ChainTooShort(ProteinError):
    pass


def aa_id(code):
    return ONE_TO_ID.get(code, UNKNOWN_ID)


def encode_sequence(seq):
    return np.array([aa_id(c) for c in seq], dtype=np.int64)


def decode_sequence(ids):
    return "".join(ID_TO_ONE[int(i)] for i in ids)


def compute_torsions(backbone):
    """Per-residue (phi, psi, omega) and a mask flagging which are defined."""
    n_res = len(backbone)
    tors = np.zeros((n_res, 3))
    mask = np.zeros((n_res, 3), dtype=bool)
    if n_res < 2:
        return tors, mask
    n, ca, c = backbone[:, 0], backbone[:, 1], backbone[:, 2]
    # phi_i: C(i-1), N(i), CA(i), C(i)
    tors[1:, 0] = geom.dihedral(c[:-1], n[1:], ca[1:], c[1:])
    # psi_i: N(i), CA(i), C(i), N(i+1)
    tors[:-1, 1] = geom.dihedral(n[:-1], ca[:-1], c[:-1], n[1:])
    # omega_i: CA(i-1), C(i-1), N(i), CA(i)
    tors[1:, 2] = geom.dihedral(ca[:-1], c[:-1], n[1:], ca[1:])
    mask[1:, 0] = mask[:-1, 1] = mask[1:, 2] = True
    return tors, mask


@dataclass(eq=False)
class Protein:
    """One chain: sequence ids ``(N,)`` and backbone ``(N, 4, 3)`` in N/CA/C/O order.

    Frames and torsions are derived on construction and never stored on disk.
    """

    id: str
    sequence: np.ndarray
    backbone: np.ndarray
    frames: geom.Frame = field(init=False, repr=False)
    torsions: np.ndarray = field(init=False, repr=False)
    torsion_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.sequence = np.asarray(self.sequence, dtype=np.int64)
        self.backbone = np.asarray(self.backbone, dtype=np.float64)
        n_res = len(self.sequence)
        if n_res < 2:
            raise ChainTooShort(f"{self.id}: need at least 2 residues, got {n_res}")
        if self.backbone.shape != (n_res, 4, 3):
            raise ProteinError(f"{self.id}: backbone shape {self.backbone.shape} does not match {n_res} residues")
        if np.any((self.sequence < 0) | (self.sequence >= N_AA)):
            raise ProteinError(f"{self.id}: sequence ids must be in [0, {N_AA})")
        if not np.all(np.isfinite(self.backbone)):
            raise ProteinError(f"{self.id}: non-finite coordinates")
        bonds = np.linalg.norm(self.backbone[:, [1, 2]] - self.backbone[:, [0, 1]], axis=-1)
        bad = np.argwhere((bonds <= 0.5) | (bonds >= 3.0))
        if len(bad):
            raise ProteinError(f"{self.id}: residue {bad[0][0]} has an implausible N-CA or CA-C bond length")
        self.frames = geom.frame_from_backbone(self.backbone[:, 0], self.backbone[:, 1], self.backbone[:, 2])
        self.torsions, self.torsion_mask = compute_torsions(self.backbone)

    def __len__(self):
        return len(self.sequence)

    @property
    def seq_str(self):
        return decode_sequence(self.sequence)

    @property
    def ca(self):
        return self.backbone[:, 1]

    def residue(self, i):
        return geom.BackboneResidue.from_array(self.backbone[i])

    def transformed(self, rotation, translation):
        """Copy with every atom mapped by ``x -> rotation @ x + translation``."""
        atoms = self.backbone @ np.asarray(rotation).T + np.asarray(translation)
        return Protein(self.id, self.sequence.copy(), atoms)

    @classmethod
    def from_frames(cls, pid, sequence, frames):
        return cls(pid, sequence, geom.backbone_from_frame(frames))

    def allclose(self, other, atol=1e-6):
        return (
            self.id == other.id
            and np.array_equal(self.sequence, other.sequence)
            and np.allclose(self.backbone, other.backbone, atol=atol, rtol=0)
        )


# ---------------------------------------------------------------- PDB subset


def parse_pdb_lite(text, strict=False):
    """Backbone chains from the ATOM records of a PDB file.

    Only fixed columns are read (record 1-6, atom 13-16, altLoc 17, resName
    18-20, chain 22, resSeq 23-26, x/y/z 31-54).  The first altLoc seen for an
    atom wins.  Residues lacking any of N/CA/C/O are dropped, or raise
    :class:`MissingBackboneAtom` when ``strict``.
    """
    chains = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line[0:6] != "ATOM  ":
            continue
        atom = line[12:16].strip()
        alt = line[16:17]
        res_name = line[17:20].strip()
        chain_id = line[21:22]
        res_key = line[22:27]  # resSeq plus insertion code
        try:
            res_seq = int(line[22:26])
            xyz = [float(line[30:38]), float(line[38:46]), float(line[46:54])]
        except ValueError:
            raise MalformedLine(lineno, "non-numeric residue number or coordinate") from None
        residues = chains.setdefault(chain_id, {})
        res = residues.setdefault(res_key, {"name": res_name, "seq": res_seq, "atoms": {}, "alt": {}})
        if atom not in BACKBONE_ATOMS:
            continue
        first_alt = res["alt"].setdefault(atom, alt)
        if atom in res["atoms"] or alt != first_alt:
            continue
        res["atoms"][atom] = xyz

    proteins = []
    for chain_id, residues in chains.items():
        seq, coords = [], []
        for res in residues.values():
            missing = [a for a in BACKBONE_ATOMS if a not in res["atoms"]]
            if missing:
                if strict:
                    raise MissingBackboneAtom(chain_id, res["seq"], missing[0])
                continue
            seq.append(ONE_TO_ID[THREE_TO_ONE.get(res["name"], "X")])
            coords.append([res["atoms"][a] for a in BACKBONE_ATOMS])
        if len(seq) < 2:
            raise ChainTooShort(f"chain {chain_id!r} has {len(seq)} complete residues")
        proteins.append(Protein(f"chain_{chain_id.strip() or '_'}", np.array(seq), np.array(coords)))
    return proteins


def format_pdb(protein, chain_id="A"):
    """ATOM records for ``protein``; the inverse of :func:`parse_pdb_lite`."""
    lines = []
    serial = 1
    for i, (aa, atoms) in enumerate(zip(protein.sequence, protein.backbone)):
        res_name = ONE_TO_THREE[ID_TO_ONE[int(aa)]]
        for name, (x, y, z) in zip(BACKBONE_ATOMS, atoms):
            lines.append(
                f"ATOM  {serial:5d} {name:<4s} {res_name:>3s} {chain_id}{i + 1:4d}    "
                f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           {name[0]}"
            )
            serial += 1
    lines.append("END")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- JSON


def protein_to_dict(p):
    return {
        "format": JSON_FORMAT,
        "id": p.id,
        "sequence": p.seq_str,
        "backbone": [[[round(float(v), 6) for v in atom] for atom in res] for res in p.backbone],
    }


def write_protein_json(p):
    return json.dumps(protein_to_dict(p), separators=(",", ":"))


def protein_from_dict(obj, pointer=""):
    if not isinstance(obj, dict):
        raise SchemaError(pointer, "expected an object")
    if obj.get("format", JSON_FORMAT) != JSON_FORMAT:
        raise SchemaError(f"{pointer}/format", f"unsupported format {obj.get('format')!r}")
    for key in ("id", "sequence", "backbone"):
        if key not in obj:
            raise SchemaError(f"{pointer}/{key}", "missing field")
    if not isinstance(obj["id"], str):
        raise SchemaError(f"{pointer}/id", "expected a string")
    seq = obj["sequence"]
    if not isinstance(seq, str) or not seq:
        raise SchemaError(f"{pointer}/sequence", "expected a non-empty string")
    for i, ch in enumerate(seq):
        if ch not in ONE_TO_ID:
            raise SchemaError(f"{pointer}/sequence", f"unknown residue code {ch!r} at {i}")
    backbone = obj["backbone"]
    if not isinstance(backbone, list) or len(backbone) != len(seq):
        raise SchemaError(f"{pointer}/backbone", f"expected {len(seq)} residues")
    for i, res in enumerate(backbone):
        if not isinstance(res, list) or len(res) != 4:
            raise SchemaError(f"{pointer}/backbone/{i}", "expected 4 atoms (N, CA, C, O)")
        for j, atom in enumerate(res):
            if (
                not isinstance(atom, list)
                or len(atom) != 3
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in atom)
            ):
                raise SchemaError(f"{pointer}/backbone/{i}/{j}", "expected 3 numbers")
    try:
        return Protein(obj["id"], encode_sequence(seq), np.array(backbone, dtype=np.float64))
    except ProteinError as exc:
        raise SchemaError(pointer, str(exc)) from exc


def read_protein_json(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    return protein_from_dict(obj)
