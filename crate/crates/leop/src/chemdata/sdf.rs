//! SDF/MOL V2000 connection-table subset.
//!
//! Reads and writes the counts line, atom block, and bond block up to
//! "M  END". V2000 bond orders 1/2/3/4 map to SINGLE/DOUBLE/TRIPLE/
//! AROMATIC; unlisted pairs are NONE. Coordinates are serialized at four
//! decimals, so a round trip reproduces them within 1e-4 angstrom and
//! everything else exactly.

use super::{AtomVocab, BondKind, BondMatrix, ChemError, Molecule3D};

/// Parse one V2000 connection table into a molecule.
pub fn parse_sdf_molecule(text: &str, vocab: &AtomVocab) -> Result<Molecule3D, ChemError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(ChemError::Parse {
            line: lines.len(),
            msg: "missing counts line (need 3 header lines + counts)".to_string(),
        });
    }
    // lines[0..3] are title/program/comment
    let counts_lineno = 4;
    let counts = lines[3];
    let n_atoms = read_count(counts, 0, counts_lineno)?;
    let n_bonds = read_count(counts, 3, counts_lineno)?;

    let atom_start = 4;
    let bond_start = atom_start + n_atoms;
    let end_needed = bond_start + n_bonds;
    // the block must be fully present and terminated
    let m_end = lines
        .iter()
        .position(|l| l.trim_end() == "M  END")
        .ok_or_else(|| ChemError::Parse {
            line: lines.len(),
            msg: "missing 'M  END' terminator".to_string(),
        })?;
    if m_end < end_needed {
        return Err(ChemError::Parse {
            line: m_end + 1,
            msg: format!(
                "counts line claims {n_atoms} atoms / {n_bonds} bonds but the block holds {}",
                m_end.saturating_sub(atom_start)
            ),
        });
    }

    let mut coords = Vec::with_capacity(n_atoms);
    let mut types = Vec::with_capacity(n_atoms);
    for (off, line) in lines[atom_start..atom_start + n_atoms].iter().enumerate() {
        let lineno = atom_start + off + 1;
        if line.len() < 31 {
            return Err(ChemError::Parse {
                line: lineno,
                msg: "atom line too short".to_string(),
            });
        }
        let x = read_f64(&line[0..10], lineno)?;
        let y = read_f64(&line[10..20], lineno)?;
        let z = read_f64(&line[20..30], lineno)?;
        let sym = line[30..line.len().min(34)].trim();
        let t = vocab
            .index_of(sym)
            .ok_or_else(|| ChemError::UnknownElement(sym.to_string()))?;
        coords.push([x, y, z]);
        types.push(t);
    }

    let mut bonds = BondMatrix::empty(n_atoms);
    for (off, line) in lines[bond_start..bond_start + n_bonds].iter().enumerate() {
        let lineno = bond_start + off + 1;
        if line.len() < 9 {
            return Err(ChemError::Parse {
                line: lineno,
                msg: "bond line too short".to_string(),
            });
        }
        let i = read_usize(&line[0..3], lineno)?;
        let j = read_usize(&line[3..6], lineno)?;
        let order = read_usize(&line[6..9], lineno)?;
        if i == 0 || j == 0 || i > n_atoms || j > n_atoms || i == j {
            return Err(ChemError::Parse {
                line: lineno,
                msg: format!("bond references invalid atom indices {i},{j}"),
            });
        }
        let kind = match order {
            1 => BondKind::Single,
            2 => BondKind::Double,
            3 => BondKind::Triple,
            4 => BondKind::Aromatic,
            other => {
                return Err(ChemError::Parse {
                    line: lineno,
                    msg: format!("unsupported bond order {other}"),
                })
            }
        };
        bonds.set(i - 1, j - 1, kind);
    }

    Molecule3D::new(coords, types, bonds)
}

/// Serialize a molecule as a V2000 block.
///
/// Refuses molecules that still contain FAKE padding atoms.
pub fn write_sdf(mol: &Molecule3D, vocab: &AtomVocab, name: &str) -> Result<String, ChemError> {
    if mol.has_fake(vocab) {
        return Err(ChemError::FakeAtomPresent);
    }
    let pairs = mol.bonds.bonded_pairs();
    let mut out = String::new();
    out.push_str(name);
    out.push('\n');
    out.push_str("  leop\n\n");
    out.push_str(&format!(
        "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000\n",
        mol.n_atoms(),
        pairs.len()
    ));
    for (xyz, &t) in mol.coords.iter().zip(&mol.types) {
        out.push_str(&format!(
            "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0\n",
            xyz[0],
            xyz[1],
            xyz[2],
            vocab.symbol(t)
        ));
    }
    for (i, j, kind) in pairs {
        let order = match kind {
            BondKind::Single => 1,
            BondKind::Double => 2,
            BondKind::Triple => 3,
            BondKind::Aromatic => 4,
            BondKind::None => unreachable!(),
        };
        out.push_str(&format!("{:>3}{:>3}{:>3}  0  0  0  0\n", i + 1, j + 1, order));
    }
    out.push_str("M  END\n$$$$\n");
    Ok(out)
}

fn read_count(line: &str, start: usize, lineno: usize) -> Result<usize, ChemError> {
    let end = (start + 3).min(line.len());
    if start >= line.len() {
        return Err(ChemError::Parse {
            line: lineno,
            msg: "counts line too short".to_string(),
        });
    }
    read_usize(&line[start..end], lineno)
}

fn read_usize(field: &str, lineno: usize) -> Result<usize, ChemError> {
    field.trim().parse::<usize>().map_err(|_| ChemError::Parse {
        line: lineno,
        msg: format!("malformed integer field '{field}'"),
    })
}

fn read_f64(field: &str, lineno: usize) -> Result<f64, ChemError> {
    field.trim().parse::<f64>().map_err(|_| ChemError::Parse {
        line: lineno,
        msg: format!("malformed real field '{field}'"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ETHANE: &str = "\
ethane
  test

  2  1  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5400    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0  0  0  0
M  END
$$$$
";

    // regular hexagon of aromatic carbons, bond length 1.39 A
    fn benzene_text() -> String {
        let mut s = String::from("benzene\n  test\n\n  6  6  0  0  0  0  0  0  0  0999 V2000\n");
        let r = 1.39;
        for i in 0..6 {
            let a = std::f64::consts::PI / 3.0 * i as f64;
            s.push_str(&format!(
                "{:>10.4}{:>10.4}{:>10.4} C   0  0  0  0  0  0  0  0  0  0  0  0\n",
                r * a.cos(),
                r * a.sin(),
                0.0
            ));
        }
        for i in 0..6 {
            s.push_str(&format!("{:>3}{:>3}  4  0  0  0  0\n", i + 1, (i + 1) % 6 + 1));
        }
        s.push_str("M  END\n$$$$\n");
        s
    }

    #[test]
    fn ethane_parses() {
        let vocab = AtomVocab::default_ligand();
        let mol = parse_sdf_molecule(ETHANE, &vocab).unwrap();
        assert_eq!(mol.n_atoms(), 2);
        assert_eq!(mol.bonds.get(0, 1), BondKind::Single);
        assert_eq!(mol.bonds.get(1, 0), BondKind::Single);
        assert_eq!(mol.types, vec![0, 0]);
    }

    #[test]
    fn benzene_aromatic_ring_round_trip() {
        let vocab = AtomVocab::default_ligand();
        let mol = parse_sdf_molecule(&benzene_text(), &vocab).unwrap();
        assert_eq!(mol.n_atoms(), 6);
        for i in 0..6 {
            assert_eq!(mol.bonds.get(i, (i + 1) % 6), BondKind::Aromatic);
        }
        let text = write_sdf(&mol, &vocab, "benzene").unwrap();
        let back = parse_sdf_molecule(&text, &vocab).unwrap();
        assert_eq!(back.types, mol.types);
        assert_eq!(back.bonds, mol.bonds);
        for (a, b) in back.coords.iter().zip(&mol.coords) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn counts_mismatch_is_parse_error() {
        let bad = "\
bad
  test

  3  1  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5400    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0  0  0  0
M  END
";
        let vocab = AtomVocab::default_ligand();
        assert!(matches!(
            parse_sdf_molecule(bad, &vocab),
            Err(ChemError::Parse { .. })
        ));
    }

    #[test]
    fn bond_out_of_range_is_parse_error() {
        let bad = "\
bad
  test

  2  1  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5400    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
  1  3  1  0  0  0  0
M  END
";
        let vocab = AtomVocab::default_ligand();
        assert!(matches!(
            parse_sdf_molecule(bad, &vocab),
            Err(ChemError::Parse { .. })
        ));
    }

    #[test]
    fn coordinate_formatting_rule() {
        let vocab = AtomVocab::default_ligand();
        let mol = Molecule3D::new(
            vec![[1.23456, 0.0, 0.0], [3.0, 0.0, 0.0]],
            vec![0, 0],
            {
                let mut b = BondMatrix::empty(2);
                b.set(0, 1, BondKind::Single);
                b
            },
        )
        .unwrap();
        let text = write_sdf(&mol, &vocab, "fmt").unwrap();
        assert!(text.contains("1.2346"), "rounded to 4 decimals: {text}");
        let back = parse_sdf_molecule(&text, &vocab).unwrap();
        assert!((back.coords[0][0] - 1.23456).abs() <= 1e-4);
    }

    #[test]
    fn fake_atoms_refused_by_writer() {
        let vocab = AtomVocab::default_ligand();
        let mol = Molecule3D::new(
            vec![[0.0; 3], [1.5, 0.0, 0.0]],
            vec![0, vocab.fake_index()],
            BondMatrix::empty(2),
        )
        .unwrap();
        assert!(matches!(
            write_sdf(&mol, &vocab, "x"),
            Err(ChemError::FakeAtomPresent)
        ));
    }

    #[test]
    fn ethane_round_trip_identity() {
        let vocab = AtomVocab::default_ligand();
        let mol = parse_sdf_molecule(ETHANE, &vocab).unwrap();
        let back = parse_sdf_molecule(&write_sdf(&mol, &vocab, "ethane").unwrap(), &vocab).unwrap();
        assert_eq!(back, mol);
    }
}
