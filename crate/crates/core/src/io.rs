//! On-disk instance and posterior format.
//!
//! A directory holds `header.json` plus raw little-endian `f64` arrays in
//! row-major order (complex entries interleaved as re, im):
//! `A.bin` (one `M x N` block, or `T` blocks when the matrix varies),
//! `y.bin` (`T x M`) and, when the ground truth is known, `support.bin`
//! (`N` bytes of 0/1), `theta.bin` and `x.bin` (`T x N`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::engine::PosteriorSummary;
use crate::error::{Error, Result};
use crate::field::{FieldKind, Scalar};
use crate::model::{GroundTruth, Instance, MmvProblem, ModelParams};
use crate::operator::{to_dense, DenseOperator, SharedOperator};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InstanceHeader<T: Scalar> {
    pub format_version: u32,
    pub field: FieldKind,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub shared_matrix: bool,
    pub has_truth: bool,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub snr_db: Option<f64>,
    pub params: Option<ModelParams<T>>,
}

/// Field-agnostic view of a header, for dispatching on the scalar type.
#[derive(Debug, Clone, Deserialize)]
pub struct HeaderProbe {
    pub format_version: u32,
    pub field: FieldKind,
}

pub fn probe_header(dir: &Path) -> Result<HeaderProbe> {
    let s = fs::read_to_string(dir.join("header.json"))?;
    let p: HeaderProbe = serde_json::from_str(&s)?;
    if p.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {}",
            p.format_version
        )));
    }
    Ok(p)
}

fn encode<T: Scalar>(values: impl Iterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.re().to_le_bytes());
        if T::COMPONENTS == 2 {
            out.extend_from_slice(&v.im().to_le_bytes());
        }
    }
    out
}

fn decode<T: Scalar>(bytes: &[u8], expected: usize, name: &str) -> Result<Vec<T>> {
    let width = 8 * T::COMPONENTS;
    if bytes.len() != expected * width {
        return Err(Error::Format(format!(
            "{name}: {} bytes, expected {}",
            bytes.len(),
            expected * width
        )));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    Ok(bytes
        .chunks_exact(width)
        .map(|c| {
            if T::COMPONENTS == 2 {
                T::from_parts(f(&c[..8]), f(&c[8..]))
            } else {
                T::from_parts(f(c), 0.0)
            }
        })
        .collect())
}

/// Row-major bytes of a matrix.
fn matrix_bytes<T: Scalar>(a: &DMatrix<T>) -> Vec<u8> {
    encode((0..a.nrows()).flat_map(|r| (0..a.ncols()).map(move |c| a[(r, c)])))
}

/// Bytes of an `N x T` matrix stored frame by frame (`T x N` row-major).
fn frames_bytes<T: Scalar>(x: &DMatrix<T>) -> Vec<u8> {
    encode(x.iter().copied())
}

/// Writes an `N x T` signal frame by frame.
pub fn write_frames<T: Scalar>(path: &Path, x: &DMatrix<T>) -> Result<()> {
    fs::write(path, frames_bytes(x))?;
    Ok(())
}

pub fn read_frames<T: Scalar>(path: &Path, n: usize, t: usize) -> Result<DMatrix<T>> {
    let v = decode::<T>(&fs::read(path)?, n * t, &path.display().to_string())?;
    Ok(DMatrix::from_vec(n, t, v))
}

fn write_f64_frames(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    fs::write(path, frames_bytes(x))?;
    Ok(())
}

pub fn write_problem<T: Scalar>(
    dir: &Path,
    problem: &MmvProblem<T>,
    truth: Option<&GroundTruth<T>>,
    meta: Option<&Instance<T>>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (n, m, frames) = problem.dims();
    let header = InstanceHeader {
        format_version: FORMAT_VERSION,
        field: T::KIND,
        n,
        m,
        t: frames,
        shared_matrix: problem.is_shared_matrix(),
        has_truth: truth.is_some(),
        seed: meta.map(|i| i.seed),
        beta: meta.map(|i| i.beta),
        snr_db: meta.and_then(|i| i.snr_db),
        params: meta.map(|i| i.params.clone()),
    };
    fs::write(dir.join("header.json"), serde_json::to_string_pretty(&header)?)?;

    let blocks = if problem.is_shared_matrix() { 1 } else { frames };
    let mut a_bytes = Vec::new();
    for t in 0..blocks {
        let op = problem.operator(t);
        let bytes = match op.as_dense() {
            Some(a) => matrix_bytes(a),
            None => matrix_bytes(&to_dense(op)),
        };
        a_bytes.extend(bytes);
    }
    fs::write(dir.join("A.bin"), a_bytes)?;
    fs::write(
        dir.join("y.bin"),
        encode(problem.observations().iter().flat_map(|y| y.iter().copied())),
    )?;
    if let Some(tr) = truth {
        fs::write(
            dir.join("support.bin"),
            tr.support.iter().map(|&s| s as u8).collect::<Vec<u8>>(),
        )?;
        fs::write(dir.join("theta.bin"), frames_bytes(&tr.thetas))?;
        fs::write(dir.join("x.bin"), frames_bytes(&tr.signals))?;
    }
    Ok(())
}

pub fn write_instance<T: Scalar>(dir: &Path, inst: &Instance<T>) -> Result<()> {
    write_problem(dir, &inst.problem, Some(&inst.truth), Some(inst))
}

#[derive(Debug, Clone)]
pub struct LoadedInstance<T: Scalar> {
    pub header: InstanceHeader<T>,
    pub problem: MmvProblem<T>,
    pub truth: Option<GroundTruth<T>>,
}

pub fn read_instance<T: Scalar>(dir: &Path) -> Result<LoadedInstance<T>> {
    let probe = probe_header(dir)?;
    if probe.field != T::KIND {
        return Err(Error::Field(format!(
            "instance holds {} data, requested {}",
            probe.field,
            T::KIND
        )));
    }
    let header: InstanceHeader<T> =
        serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
    let (n, m, frames) = (header.n, header.m, header.t);
    let blocks = if header.shared_matrix { 1 } else { frames };
    let a_all = decode::<T>(&fs::read(dir.join("A.bin"))?, blocks * m * n, "A.bin")?;
    let ops: Vec<SharedOperator<T>> = a_all
        .chunks_exact(m * n)
        .map(|c| Arc::new(DenseOperator::new(DMatrix::from_row_slice(m, n, c))) as SharedOperator<T>)
        .collect();
    let y_all = decode::<T>(&fs::read(dir.join("y.bin"))?, frames * m, "y.bin")?;
    let ys: Vec<DVector<T>> = y_all
        .chunks_exact(m)
        .map(|c| DVector::from_column_slice(c))
        .collect();
    let problem = if header.shared_matrix {
        MmvProblem::with_shared_operator(ops[0].clone(), ys)?
    } else {
        MmvProblem::new(ops, ys)?
    };
    let truth = if header.has_truth {
        let s = fs::read(dir.join("support.bin"))?;
        if s.len() != n || s.iter().any(|&b| b > 1) {
            return Err(Error::Format("support.bin must hold N bytes of 0/1".into()));
        }
        Some(GroundTruth {
            support: s.iter().map(|&b| b == 1).collect(),
            thetas: read_frames(&dir.join("theta.bin"), n, frames)?,
            signals: read_frames(&dir.join("x.bin"), n, frames)?,
        })
    } else {
        None
    };
    Ok(LoadedInstance {
        header,
        problem,
        truth,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PosteriorHeader {
    field: FieldKind,
    n: usize,
    t: usize,
    s_post: Vec<f64>,
}

/// Writes `posterior.json` (activity posteriors) and the `T x N` arrays
/// `x_mean.bin`, `x_var.bin`, `theta_mean.bin`, `theta_var.bin`.
pub fn write_posterior<T: Scalar>(dir: &Path, post: &PosteriorSummary<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let h = PosteriorHeader {
        field: T::KIND,
        n: post.n(),
        t: post.frames(),
        s_post: post.s_post.clone(),
    };
    fs::write(dir.join("posterior.json"), serde_json::to_string_pretty(&h)?)?;
    fs::write(dir.join("x_mean.bin"), frames_bytes(&post.x_mean))?;
    write_f64_frames(&dir.join("x_var.bin"), &post.x_var)?;
    fs::write(dir.join("theta_mean.bin"), frames_bytes(&post.theta_mean))?;
    write_f64_frames(&dir.join("theta_var.bin"), &post.theta_var)?;
    Ok(())
}

/// Reads back the posterior means written by [`write_posterior`].
pub fn read_posterior_means<T: Scalar>(dir: &Path) -> Result<(DMatrix<T>, Vec<f64>)> {
    let h: PosteriorHeader = serde_json::from_str(&fs::read_to_string(dir.join("posterior.json"))?)?;
    if h.field != T::KIND {
        return Err(Error::Field(format!("posterior holds {} data", h.field)));
    }
    Ok((read_frames(&dir.join("x_mean.bin"), h.n, h.t)?, h.s_post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{solve, SolverConfig};
    use crate::model::{generate_instance, GenConfig, MatrixKind};
    use crate::operator::FnOperator;
    use num_complex::Complex64;

    fn instance<T: Scalar>(beta: f64, seed: u64) -> Instance<T> {
        generate_instance(&GenConfig {
            params: ModelParams::with_stationary_variance(0.2, T::from_parts(0.1, 0.2), 0.1, 1.0, 0.0),
            n: 12,
            m: 7,
            t: 3,
            snr_db: Some(20.0),
            beta,
            matrix_kind: MatrixKind::IidGaussianUnitColumns,
            seed,
        })
        .unwrap()
    }

    fn round_trip<T: Scalar>(beta: f64) {
        let dir = tempfile::tempdir().unwrap();
        let inst = instance::<T>(beta, 3);
        write_instance(dir.path(), &inst).unwrap();
        let back = read_instance::<T>(dir.path()).unwrap();
        assert_eq!(back.problem.dims(), inst.problem.dims());
        assert_eq!(back.problem.is_shared_matrix(), beta == 0.0);
        assert_eq!(back.problem.dense_matrices(), inst.problem.dense_matrices());
        assert_eq!(back.problem.observations(), inst.problem.observations());
        let truth = back.truth.unwrap();
        assert_eq!(truth.support, inst.truth.support);
        assert_eq!(truth.thetas, inst.truth.thetas);
        assert_eq!(truth.signals, inst.truth.signals);
        assert_eq!(back.header.params.as_ref(), Some(&inst.params));
        assert_eq!(back.header.seed, Some(3));
        assert_eq!(back.header.field, T::KIND);
    }

    #[test]
    fn instances_round_trip_bit_exactly() {
        round_trip::<f64>(0.0);
        round_trip::<f64>(0.4);
        round_trip::<Complex64>(0.0);
        round_trip::<Complex64>(0.4);
    }

    #[test]
    fn matrix_file_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let inst = instance::<f64>(0.0, 4);
        write_instance(dir.path(), &inst).unwrap();
        let bytes = fs::read(dir.path().join("A.bin")).unwrap();
        assert_eq!(bytes.len(), 7 * 12 * 8);
        let a = &inst.problem.dense_matrices()[0];
        let second = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        assert_eq!(second, a[(0, 1)]);
    }

    #[test]
    fn implicit_operators_are_stored_densely() {
        let dir = tempfile::tempdir().unwrap();
        let inst = instance::<f64>(0.0, 5);
        let a = inst.problem.dense_matrices()[0].clone();
        let op: SharedOperator<f64> = Arc::new(FnOperator::from_dense(a.clone()));
        let problem = MmvProblem::with_shared_operator(op, inst.problem.observations().to_vec()).unwrap();
        write_problem(dir.path(), &problem, None, None).unwrap();
        let back = read_instance::<f64>(dir.path()).unwrap();
        assert!(back.truth.is_none());
        assert!(back.header.params.is_none());
        let diff = (&back.problem.dense_matrices()[0] - a).abs().max();
        assert!(diff < 1e-15);
    }

    #[test]
    fn malformed_directories_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let inst = instance::<f64>(0.3, 6);
        write_instance(dir.path(), &inst).unwrap();
        assert!(matches!(read_instance::<Complex64>(dir.path()), Err(Error::Field(_))));

        let y = dir.path().join("y.bin");
        let bytes = fs::read(&y).unwrap();
        fs::write(&y, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_instance::<f64>(dir.path()), Err(Error::Format(_))));
        fs::write(&y, &bytes).unwrap();

        fs::write(dir.path().join("support.bin"), vec![2u8; 12]).unwrap();
        assert!(matches!(read_instance::<f64>(dir.path()), Err(Error::Format(_))));

        let h = dir.path().join("header.json");
        let text = fs::read_to_string(&h).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&h, text).unwrap();
        assert!(matches!(probe_header(dir.path()), Err(Error::Format(_))));
        assert!(read_instance::<f64>(tempfile::tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn posterior_means_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = instance::<Complex64>(0.0, 7);
        let out = solve(&inst.problem, &inst.params, &SolverConfig::default()).unwrap();
        write_posterior(dir.path(), &out.posterior).unwrap();
        let (x, s) = read_posterior_means::<Complex64>(dir.path()).unwrap();
        assert_eq!(x, out.posterior.x_mean);
        assert_eq!(s, out.posterior.s_post);
        assert!(read_posterior_means::<f64>(dir.path()).is_err());
        let var = fs::read(dir.path().join("x_var.bin")).unwrap();
        assert_eq!(var.len(), 12 * 3 * 8);
    }
}
