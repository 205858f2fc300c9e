//! Look up diagnosis and procedure codes in the shipped code table.
//!
//! ```text
//! cargo run --example classify_codes
//! ```

use kidney_phenotype::code_tables::{CodeSystem, CodeTable};

fn main() {
    let table = CodeTable::builtin();
    println!("{} entries", table.len());

    let probes = [
        ("585.6", CodeSystem::Icd9Diag),
        ("n18.4", CodeSystem::Icd10Diag),
        ("Z94.0", CodeSystem::Icd10Diag),
        ("584.9", CodeSystem::Icd9Diag),
        ("N17.9", CodeSystem::Icd10Diag),
        ("90935", CodeSystem::Cpt),
        // near misses
        ("N17.99", CodeSystem::Icd10Diag),
        ("N18", CodeSystem::Icd10Diag),
        ("401.9", CodeSystem::Icd9Diag),
    ];
    for (code, system) in probes {
        let cats: Vec<_> = table.classify(code, system).iter().map(|c| c.as_str()).collect();
        let specific: Vec<_> = table.classify_specific(code, system).iter().map(|c| c.as_str()).collect();
        println!("{code:>8} {:<10} {:?} specific={:?}", system.as_str(), cats, specific);
    }
}
