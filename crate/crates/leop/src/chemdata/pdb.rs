//! Fixed-column PDB subset for pocket atoms.
//!
//! Only ATOM/HETATM records are read, and only the fields we need:
//!
//! | Columns | Field        |
//! |---------|--------------|
//! | 1 - 6   | record name  |
//! | 13 - 16 | atom name    |
//! | 17      | altLoc       |
//! | 31 - 38 | x (Real 8.3) |
//! | 39 - 46 | y (Real 8.3) |
//! | 47 - 54 | z (Real 8.3) |
//! | 77 - 78 | element      |
//!
//! No CONECT, charges, or residue features. Alternate locations are not
//! resolved beyond keeping the first conformer (blank or 'A').

use super::{ChemError, PocketContext, POCKET_ELEMENTS};

/// Result of a pocket parse: the pocket plus the number of records
/// skipped for carrying an element outside [`POCKET_ELEMENTS`].
#[derive(Debug, Clone)]
pub struct PdbPocket {
    pub pocket: PocketContext,
    pub skipped_unknown_elements: usize,
}

/// Parse ATOM/HETATM records into a pocket.
///
/// The element comes from columns 77-78, falling back to the first
/// alphabetic character of the atom name. Records with elements outside
/// the pocket vocabulary are skipped and counted.
pub fn parse_pdb_pocket(text: &str, pocket_id: &str) -> Result<PdbPocket, ChemError> {
    let mut coords = Vec::new();
    let mut elements = Vec::new();
    let mut skipped = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if !(line.starts_with("ATOM") || line.starts_with("HETATM")) {
            continue;
        }
        // keep only the first alternate location
        if let Some(alt) = line.chars().nth(16) {
            if alt != ' ' && alt != 'A' {
                continue;
            }
        }
        let x = read_coord(line, 30, lineno)?;
        let y = read_coord(line, 38, lineno)?;
        let z = read_coord(line, 46, lineno)?;

        let symbol = element_symbol(line);
        match symbol.and_then(|s| POCKET_ELEMENTS.iter().position(|&e| e == s)) {
            Some(idx) => {
                coords.push([x, y, z]);
                elements.push(idx);
            }
            None => skipped += 1,
        }
    }

    if coords.is_empty() {
        return Err(ChemError::EmptyPocket);
    }
    Ok(PdbPocket {
        pocket: PocketContext::new(coords, elements, pocket_id.to_string())?,
        skipped_unknown_elements: skipped,
    })
}

fn read_coord(line: &str, start: usize, lineno: usize) -> Result<f64, ChemError> {
    let end = (start + 8).min(line.len());
    if start >= line.len() {
        return Err(ChemError::Parse {
            line: lineno,
            msg: "record too short for coordinate fields".to_string(),
        });
    }
    line[start..end].trim().parse::<f64>().map_err(|_| ChemError::Parse {
        line: lineno,
        msg: format!("malformed coordinate field '{}'", &line[start..end]),
    })
}

fn element_symbol(line: &str) -> Option<String> {
    if line.len() >= 78 {
        let sym = line[76..78].trim();
        if !sym.is_empty() {
            return Some(normalize(sym));
        }
    }
    // fallback: first alphabetic character of the atom name (cols 13-16)
    let name = line.get(12..16.min(line.len()))?;
    name.chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
}

fn normalize(sym: &str) -> String {
    let mut chars = sym.chars();
    let mut out = String::new();
    if let Some(first) = chars.next() {
        out.push(first.to_ascii_uppercase());
        for c in chars {
            out.push(c.to_ascii_lowercase());
        }
    }
    out
}

/// Write a pocket as HETATM records (the inverse subset of the reader).
pub fn write_pdb_pocket(pocket: &PocketContext) -> String {
    let mut out = String::new();
    for (i, (xyz, &elem)) in pocket.coords.iter().zip(&pocket.elements).enumerate() {
        let sym = POCKET_ELEMENTS[elem];
        out.push_str(&format!(
            "HETATM{serial:>5} {name:<4} PKT A{res:>4}    {x:>8.3}{y:>8.3}{z:>8.3}  1.00  0.00          {sym:>2}\n",
            serial = i + 1,
            name = sym,
            res = 1,
            x = xyz[0],
            y = xyz[1],
            z = xyz[2],
            sym = sym,
        ));
    }
    out.push_str("END\n");
    out
}
