//! Print every regime rendering of the bundled cases.

use std::path::Path;

use semzip::atom::SemanticAtom;
use semzip::case::{load_case_set, Regime};
use semzip::codec::Codec;

fn main() -> anyhow::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "dataset".into());
    let set = load_case_set(Path::new(&root))?;
    let codec = Codec::builtin();
    for case in &set.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        println!("== {}", case.case_id);
        for regime in Regime::ALL {
            let r = codec.render(&atoms, regime, None)?;
            println!("[{regime}] {}", r.payload);
            if r.decodable {
                let back = codec.parse_symbolic(&r.payload, regime, None)?;
                println!("   round-trip: {}", codec.same_atoms(&atoms, &back));
            }
        }
    }
    Ok(())
}
