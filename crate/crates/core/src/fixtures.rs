//! Canonical two-section pipeline fixtures shared by the test suites and
//! the smoke tooling.

use crate::catalog::VirtualDataCatalog;

/// VDL for the simulation-section transformation and one derivation of it.
pub const TWO_SECTION_LISTING: &str = r#"TR FORTRAN_SECTION( none runnum, none project,
                    none numevents, output outfile,
                    input kincard, input simcard,
                    input geomfile, output logfile )
{
  argument = ${none:runnum};
  argument = ${none:project};
  argument = ${none:numevents};
  argument = ${input:kincard};
  argument = ${input:simcard};
  argument = ${input:geomfile};
  argument = ${output:logfile};
  argument = ${output:outfile};
}

DV EG02_BIGJETS_1_SIMULATION->FORTRAN_SECTION(
  kincard=@{input:"eg02_BigJets_Id_252.txt"},
  simcard=@{input:"STANDARD_125_Id_42.txt"},
  geomfile=@{input:"cms125.rz"},
  logfile=@{output:"fortran.eg02_BigJets_1.log"},
  numevents="250",
  outfile=@{output:"eg02_BigJets_1.fz"},
  project="eg02_BigJets",
  runnum="1" );
"#;

/// VDL for the reconstruction section consuming the simulation output and
/// producing the flat n-tuple.
pub const NTUPLE_SECTION: &str = r#"TR ORCA_SECTION( none runnum, none project,
                 none numevents, input infile,
                 output ntuple )
{
  argument = ${none:runnum};
  argument = ${none:project};
  argument = ${none:numevents};
  argument = ${input:infile};
  argument = ${output:ntuple};
}

DV EG02_BIGJETS_1_NTUPLE->ORCA_SECTION(
  infile=@{input:"eg02_BigJets_1.fz"},
  ntuple=@{output:"eg02_BigJets_1.ntpl"},
  numevents="250",
  project="eg02_BigJets",
  runnum="1" );
"#;

pub const FORTRAN_DV: &str = "EG02_BIGJETS_1_SIMULATION";
pub const NTUPLE_DV: &str = "EG02_BIGJETS_1_NTUPLE";
pub const FZ_FILE: &str = "eg02_BigJets_1.fz";
pub const NTUPLE_FILE: &str = "eg02_BigJets_1.ntpl";
pub const CARD_FILES: [&str; 3] = [
    "eg02_BigJets_Id_252.txt",
    "STANDARD_125_Id_42.txt",
    "cms125.rz",
];

/// Catalog holding the full two-stage pipeline: simulation feeding the
/// n-tuple stage through the `.fz` file.
pub fn two_stage_catalog() -> VirtualDataCatalog {
    let mut catalog = VirtualDataCatalog::new();
    catalog
        .insert_text(TWO_SECTION_LISTING)
        .expect("fixture listing parses");
    catalog
        .insert_text(NTUPLE_SECTION)
        .expect("fixture ntuple section parses");
    catalog
}
