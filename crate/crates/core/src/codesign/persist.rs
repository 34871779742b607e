//! Structured result-file serialization.
//!
//! A synthesis result is persisted as JSON with a fixed layout (format tag
//! `platoon-codesign/result-v1`): achieved gains, multipliers, per-vehicle
//! certificates (storage matrices row-major), the coupling and leader gain
//! blocks row-major, the solve ledger, and — for decentralized designs —
//! the design-order ledger with its accumulated network-certificate blocks
//! so merges can continue from the stored state. A content hash of the
//! producing configuration ties results to their scenario file.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, RowVector3};
use serde::{Deserialize, Serialize};

use super::{
    CodesignError, DesignMode, LedgerEntry, PlatoonLedger, SolveSummary, SynthesisResult,
};
use crate::dissipativity::SubsystemCertificate;
use crate::platoon::{Formulation, GainSet};

pub const FORMAT: &str = "platoon-codesign/result-v1";

type Block3 = [[f64; 3]; 3];

fn block3(m: &Matrix3<f64>) -> Block3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

fn from_block3(b: &Block3) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| b[r][c])
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nr, nc, |r, c| rows[r][c])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub nu: f64,
    pub rho: f64,
    pub rho_tilde: f64,
    pub gamma_tilde: f64,
    pub p: f64,
    /// Storage matrix, row-major.
    pub storage: Vec<Vec<f64>>,
    /// Local feedback row.
    pub local_gain: Vec<f64>,
}

impl VehicleRecord {
    fn of(cert: &SubsystemCertificate) -> Self {
        Self {
            nu: cert.nu,
            rho: cert.rho,
            rho_tilde: cert.rho_tilde,
            gamma_tilde: cert.gamma_tilde,
            p: cert.p,
            storage: rows_of(&cert.storage),
            local_gain: (0..cert.local_gain.ncols())
                .map(|c| cert.local_gain[(0, c)])
                .collect(),
        }
    }

    fn cert(&self) -> SubsystemCertificate {
        SubsystemCertificate {
            nu: self.nu,
            rho: self.rho,
            rho_tilde: self.rho_tilde,
            gamma_tilde: self.gamma_tilde,
            p: self.p,
            storage: matrix_of(&self.storage),
            local_gain: DMatrix::from_fn(1, self.local_gain.len(), |_, c| self.local_gain[c]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainRecord {
    /// Coupling blocks `K[i][j]`, each row-major.
    pub k: Vec<Vec<Block3>>,
    /// Leader blocks `K_i0`, row-major.
    pub k_leader: Vec<Block3>,
    /// Local feedback rows.
    pub local_rows: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntryRecord {
    pub label: usize,
    pub position: usize,
    pub gamma_hat: f64,
    pub p: f64,
    pub vehicle: VehicleRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub entries: Vec<LedgerEntryRecord>,
    /// Lower-triangle 12x12 network-certificate blocks, row-major, for the
    /// active partition.
    pub w: Vec<Vec<Vec<Vec<f64>>>>,
    pub splits: Vec<usize>,
    /// Design-order coupling and leader blocks.
    pub k: Vec<Vec<Block3>>,
    pub k_leader: Vec<Block3>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub format: String,
    /// SHA-256 of the configuration file that produced this result.
    pub config_sha256: String,
    pub mode: DesignMode,
    pub formulation: Formulation,
    pub gamma_tilde: f64,
    pub gamma: f64,
    pub gamma_bar: f64,
    pub gamma_hats: Option<Vec<f64>>,
    pub p: Vec<f64>,
    pub analysis_p: Vec<f64>,
    pub vehicles: Vec<VehicleRecord>,
    pub gains: GainRecord,
    pub ledger: Option<LedgerRecord>,
    pub reports: Vec<SolveSummary>,
}

impl ResultFile {
    pub fn of(
        result: &SynthesisResult,
        ledger: Option<&PlatoonLedger>,
        config_sha256: &str,
    ) -> Self {
        let n = result.n();
        let gains = GainRecord {
            k: (0..n)
                .map(|i| (0..n).map(|j| block3(&result.gains.k[i][j])).collect())
                .collect(),
            k_leader: result.gains.k_leader.iter().map(block3).collect(),
            local_rows: result
                .gains
                .local_rows
                .iter()
                .map(|r| [r[0], r[1], r[2]])
                .collect(),
        };
        let ledger = ledger.map(|l| LedgerRecord {
            entries: l
                .entries
                .iter()
                .map(|e| LedgerEntryRecord {
                    label: e.label,
                    position: e.position,
                    gamma_hat: e.gamma_hat,
                    p: e.p,
                    vehicle: VehicleRecord::of(&e.cert),
                })
                .collect(),
            w: l.w
                .iter()
                .map(|row| row.iter().map(rows_of).collect())
                .collect(),
            splits: l.splits.clone(),
            k: l.k
                .iter()
                .map(|row| row.iter().map(block3).collect())
                .collect(),
            k_leader: l.k_leader.iter().map(block3).collect(),
        });
        Self {
            format: FORMAT.to_string(),
            config_sha256: config_sha256.to_string(),
            mode: result.mode,
            formulation: result.formulation,
            gamma_tilde: result.gamma_tilde,
            gamma: result.gamma(),
            gamma_bar: result.gamma_bar,
            gamma_hats: result.gamma_hats.clone(),
            p: result.p.clone(),
            analysis_p: result.analysis_p.clone(),
            vehicles: result.certificates.iter().map(VehicleRecord::of).collect(),
            gains,
            ledger,
            reports: result.reports.clone(),
        }
    }

    /// Reconstructs the in-memory result (and the design ledger when one was
    /// stored). Gain blocks are rebuilt without structure validation so that
    /// integrity checks can run against the raw file content.
    pub fn into_parts(self) -> (SynthesisResult, Option<PlatoonLedger>) {
        let k: Vec<Vec<Matrix3<f64>>> = self
            .gains
            .k
            .iter()
            .map(|row| row.iter().map(from_block3).collect())
            .collect();
        let k_leader: Vec<Matrix3<f64>> = self.gains.k_leader.iter().map(from_block3).collect();
        let local_rows: Vec<RowVector3<f64>> = self
            .gains
            .local_rows
            .iter()
            .map(|r| RowVector3::new(r[0], r[1], r[2]))
            .collect();
        let gains = GainSet::from_parts(self.formulation, local_rows, k, k_leader);
        let result = SynthesisResult {
            mode: self.mode,
            formulation: self.formulation,
            gains,
            certificates: self.vehicles.iter().map(VehicleRecord::cert).collect(),
            gamma_tilde: self.gamma_tilde,
            gamma_hats: self.gamma_hats,
            p: self.p,
            analysis_p: self.analysis_p,
            gamma_bar: self.gamma_bar,
            reports: self.reports,
        };
        let ledger = self.ledger.map(|l| PlatoonLedger {
            formulation: self.formulation,
            entries: l
                .entries
                .into_iter()
                .map(|e| LedgerEntry {
                    label: e.label,
                    position: e.position,
                    cert: e.vehicle.cert(),
                    gamma_hat: e.gamma_hat,
                    p: e.p,
                })
                .collect(),
            w: l.w
                .iter()
                .map(|row| row.iter().map(|b| matrix_of(b)).collect())
                .collect(),
            k: l.k
                .iter()
                .map(|row| row.iter().map(from_block3).collect())
                .collect(),
            k_leader: l.k_leader.iter().map(from_block3).collect(),
            splits: l.splits,
            reports: Vec::new(),
        });
        (result, ledger)
    }
}

/// Writes a result (and optionally its design ledger) as pretty JSON.
pub fn save_result(
    path: &Path,
    result: &SynthesisResult,
    ledger: Option<&PlatoonLedger>,
    config_sha256: &str,
) -> Result<(), CodesignError> {
    let file = ResultFile::of(result, ledger, config_sha256);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| CodesignError::VerificationFailed(format!("serialize: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| CodesignError::VerificationFailed(format!("write {path:?}: {e}")))
}

pub struct LoadedResult {
    pub result: SynthesisResult,
    pub ledger: Option<PlatoonLedger>,
    pub config_sha256: String,
}

/// Reads and reconstructs a persisted result.
pub fn load_result(path: &Path) -> Result<LoadedResult, CodesignError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CodesignError::VerificationFailed(format!("read {path:?}: {e}")))?;
    let file: ResultFile = serde_json::from_str(&text)
        .map_err(|e| CodesignError::VerificationFailed(format!("parse {path:?}: {e}")))?;
    if file.format != FORMAT {
        return Err(CodesignError::VerificationFailed(format!(
            "unsupported result format {:?}",
            file.format
        )));
    }
    let config_sha256 = file.config_sha256.clone();
    let (result, ledger) = file.into_parts();
    Ok(LoadedResult {
        result,
        ledger,
        config_sha256,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codesign::{
        centralized_codesign, local_certificates, uniform_multipliers, CostSpec,
    };
    use crate::dissipativity::LocalSynthesisOptions;

    #[test]
    fn result_file_round_trip() {
        let certs =
            local_certificates(&uniform_multipliers(2), &LocalSynthesisOptions::default())
                .unwrap();
        let costs = CostSpec::default_for(2);
        let result = centralized_codesign(&certs, Formulation::I, &costs).unwrap();
        let dir = std::env::temp_dir().join("codesign-persist-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("result.json");
        save_result(&path, &result, None, "deadbeef").unwrap();
        let loaded = load_result(&path).unwrap();
        assert_eq!(loaded.config_sha256, "deadbeef");
        assert_eq!(loaded.result.mode, DesignMode::Centralized);
        assert_eq!(loaded.result.n(), 2);
        assert!((loaded.result.gamma_tilde - result.gamma_tilde).abs() < 1e-15);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(loaded.result.gains.k[i][j], result.gains.k[i][j]);
            }
        }
        loaded.result.gains.structure_check().unwrap();
        std::fs::remove_file(&path).ok();
    }
}
