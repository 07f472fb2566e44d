//! Virtual data catalog: the persistent store of transformations and
//! derivations, indexed by the logical files each derivation produces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::vdl::{
    bind_derivation, parse_vdl, serialize_vdl, BindError, Binding, Derivation, LogicalFileName,
    Transformation, VdlObject,
};

const FORMAT_HEADER: &str = "# vdc-format 1";

/// Store of VDL objects with a single-producer index over output files.
///
/// A derivation may be inserted before its transformation; the dangling
/// reference only errors when a binding is requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VirtualDataCatalog {
    transformations: BTreeMap<String, Transformation>,
    derivations: BTreeMap<String, Derivation>,
    producer_index: BTreeMap<LogicalFileName, String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("DuplicateName: {kind} `{name}` already present with different content")]
    DuplicateName { kind: &'static str, name: String },
    #[error(
        "ConflictingProducer: `{lfn}` is already produced by `{existing}`; rejected second producer `{new_producer}`"
    )]
    ConflictingProducer {
        lfn: LogicalFileName,
        existing: String,
        new_producer: String,
    },
    #[error("UnknownDerivation: `{0}` is not in the catalog")]
    UnknownDerivation(String),
    #[error("UnknownTransformation: derivation `{derivation}` references `{transformation}`")]
    UnknownTransformation {
        derivation: String,
        transformation: String,
    },
    #[error("{0}")]
    Bind(#[from] BindError),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError at line {line}: {message}")]
    Format { line: u32, message: String },
}

impl VirtualDataCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert one parsed object. Re-inserting a byte-identical object is a
    /// no-op; a name collision with different content or a second producer
    /// for an already-produced file is rejected without modifying the
    /// catalog.
    pub fn insert(&mut self, object: VdlObject) -> Result<(), CatalogError> {
        match object {
            VdlObject::Transformation(tr) => {
                if let Some(existing) = self.transformations.get(&tr.name) {
                    if *existing == tr {
                        return Ok(());
                    }
                    return Err(CatalogError::DuplicateName {
                        kind: "transformation",
                        name: tr.name,
                    });
                }
                self.transformations.insert(tr.name.clone(), tr);
                Ok(())
            }
            VdlObject::Derivation(dv) => {
                if let Some(existing) = self.derivations.get(&dv.name) {
                    if *existing == dv {
                        return Ok(());
                    }
                    return Err(CatalogError::DuplicateName {
                        kind: "derivation",
                        name: dv.name,
                    });
                }
                let outputs = dv.output_lfns();
                for lfn in &outputs {
                    if let Some(existing) = self.producer_index.get(lfn) {
                        return Err(CatalogError::ConflictingProducer {
                            lfn: lfn.clone(),
                            existing: existing.clone(),
                            new_producer: dv.name,
                        });
                    }
                }
                for lfn in outputs {
                    self.producer_index.insert(lfn, dv.name.clone());
                }
                self.derivations.insert(dv.name.clone(), dv);
                Ok(())
            }
        }
    }

    /// Parse VDL text and insert every object; returns the object count.
    pub fn insert_text(&mut self, text: &str) -> Result<usize, CatalogError> {
        let objects = parse_vdl(text).map_err(|e| CatalogError::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        let count = objects.len();
        for object in objects {
            self.insert(object)?;
        }
        Ok(count)
    }

    pub fn transformation(&self, name: &str) -> Option<&Transformation> {
        self.transformations.get(name)
    }

    pub fn derivation(&self, name: &str) -> Option<&Derivation> {
        self.derivations.get(name)
    }

    /// The unique derivation producing `lfn`, if any. Absence means the
    /// file is external and must be resolved by replica lookup.
    pub fn find_producer(&self, lfn: &LogicalFileName) -> Option<&Derivation> {
        self.producer_index
            .get(lfn)
            .and_then(|name| self.derivations.get(name))
    }

    /// Resolve a derivation against its transformation and bind it.
    pub fn binding_for(&self, dv_name: &str) -> Result<Binding, CatalogError> {
        let dv = self
            .derivations
            .get(dv_name)
            .ok_or_else(|| CatalogError::UnknownDerivation(dv_name.to_string()))?;
        let tr = self.transformations.get(&dv.transformation_name).ok_or_else(|| {
            CatalogError::UnknownTransformation {
                derivation: dv.name.clone(),
                transformation: dv.transformation_name.clone(),
            }
        })?;
        Ok(bind_derivation(dv, tr)?)
    }

    pub fn transformation_names(&self) -> impl Iterator<Item = &str> {
        self.transformations.keys().map(String::as_str)
    }

    pub fn derivation_names(&self) -> impl Iterator<Item = &str> {
        self.derivations.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.transformations.len() + self.derivations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transformations.is_empty() && self.derivations.is_empty()
    }

    /// All objects, transformations first, each kind sorted by name.
    pub fn objects(&self) -> Vec<VdlObject> {
        self.transformations
            .values()
            .cloned()
            .map(VdlObject::Transformation)
            .chain(self.derivations.values().cloned().map(VdlObject::Derivation))
            .collect()
    }

    pub fn export(&self) -> String {
        serialize_vdl(&self.objects())
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        let mut text = String::from(FORMAT_HEADER);
        text.push('\n');
        text.push_str(&self.export());
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = fs::read_to_string(path)?;
        Self::from_file_text(&text)
    }

    fn from_file_text(text: &str) -> Result<Self, CatalogError> {
        match text.lines().next() {
            Some(first) if first.trim_end() == FORMAT_HEADER => {}
            _ => {
                return Err(CatalogError::Format {
                    line: 1,
                    message: format!("missing `{FORMAT_HEADER}` header"),
                })
            }
        }
        let mut catalog = Self::new();
        catalog.insert_text(text)?;
        Ok(catalog)
    }
}
