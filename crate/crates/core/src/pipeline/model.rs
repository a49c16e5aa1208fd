//! Trained models and their on-disk archive.
//!
//! Layout: a 16-byte magic header followed by sections, each a 4-byte tag, a
//! little-endian `u64` payload length and the payload. `CONF` holds sorted
//! `key=value` lines; `DICT`, `ANCH` and `BASI` hold matrices as `u32` rows,
//! `u32` columns and little-endian `f64` values in column-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, SparlowError};
use crate::graphs::{GraphSpec, Variant};
use crate::manifold::{Dictionary, Projector};
use crate::objective::SparLowParams;
use crate::sparse::ElasticNetPrior;

pub const MODEL_MAGIC: &[u8; 16] = b"SPARLOWMODEL\0\0\0\x01";
const BASIS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dict: Dictionary,
    pub proj: Projector,
    /// Orthonormal basis of `range(P)`, columns sign-fixed.
    pub basis: DMatrix<f64>,
    pub prior: ElasticNetPrior,
    pub params: SparLowParams,
    pub graph: GraphSpec,
}

impl Model {
    pub fn new(
        dict: Dictionary,
        proj: Projector,
        prior: ElasticNetPrior,
        params: SparLowParams,
        graph: GraphSpec,
    ) -> Result<Self> {
        let basis = proj.basis()?;
        let proj = Projector::from_basis(&basis)?;
        if proj.rank() != basis.ncols() {
            return Err(SparlowError::Validation(
                "projector rank changed on rebuild".into(),
            ));
        }
        let model = Model {
            dict,
            proj,
            basis,
            prior,
            params,
            graph,
        };
        model.check()?;
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.proj.rank()
    }

    pub fn check(&self) -> Result<()> {
        let u = &self.basis;
        let l = u.ncols();
        let gap = (u * u.transpose() - self.proj.matrix()).norm();
        let ortho = (u.tr_mul(u) - DMatrix::identity(l, l)).norm();
        if gap > BASIS_TOL || ortho > 1e-10 || self.dict.atoms() != u.nrows() {
            return Err(SparlowError::Validation(format!(
                "inconsistent model basis (‖UUᵀ − P‖ = {gap:e}, ‖UᵀU − I‖ = {ortho:e})"
            )));
        }
        Ok(())
    }

    fn config_text(&self) -> String {
        let g = &self.graph;
        let mut kv = BTreeMap::new();
        kv.insert("variant", g.variant.name().to_string());
        kv.insert("rank", self.rank().to_string());
        kv.insert("lambda1", format!("{:?}", self.prior.lambda1()));
        kv.insert("lambda2", format!("{:?}", self.prior.lambda2()));
        kv.insert("sigma", format!("{:?}", self.params.sigma));
        kv.insert("mu1", format!("{:?}", self.params.mu1));
        kv.insert("mu2", format!("{:?}", self.params.mu2));
        kv.insert("knn", g.knn.to_string());
        kv.insert(
            "heat_t",
            g.heat_t.map_or_else(|| "auto".to_string(), |t| format!("{t:?}")),
        );
        kv.insert("k1", g.k1.to_string());
        kv.insert("k2", g.k2.to_string());
        kv.insert("alpha", format!("{:?}", g.alpha));
        kv.insert("alpha1", format!("{:?}", g.alpha1));
        kv.insert("alpha2", format!("{:?}", g.alpha2));
        kv.insert("mu_mvr", format!("{:?}", g.mu_mvr));
        kv.insert("rho1", format!("{:?}", g.rho1));
        kv.insert("rho2", format!("{:?}", g.rho2));
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        push_section(&mut out, b"CONF", self.config_text().as_bytes());
        push_section(&mut out, b"DICT", &matrix_bytes(self.dict.matrix()));
        push_section(&mut out, b"ANCH", &matrix_bytes(self.params.anchor.matrix()));
        push_section(&mut out, b"BASI", &matrix_bytes(&self.basis));
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let err = |offset: usize, message: String| SparlowError::Parse {
            location: format!("{source}@{offset}"),
            message,
        };
        if bytes.len() < 16 || &bytes[..16] != MODEL_MAGIC {
            return Err(err(0, "not a sparlow model file".into()));
        }
        let mut sections = BTreeMap::new();
        let mut pos = 16;
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(err(pos, "truncated section header".into()));
            }
            let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
            let start = pos + 12;
            if bytes.len() - start < len {
                return Err(err(start, format!("section {} is truncated", tag_name(&tag))));
            }
            sections.insert(tag, (start, &bytes[start..start + len]));
            pos = start + len;
        }
        let section = |tag: &[u8; 4]| {
            sections
                .get(tag)
                .copied()
                .ok_or_else(|| err(pos, format!("missing section {}", tag_name(tag))))
        };

        let (conf_at, conf) = section(b"CONF")?;
        let text = std::str::from_utf8(conf).map_err(|_| err(conf_at, "config is not UTF-8".into()))?;
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| err(conf_at, format!("config lacks '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| err(conf_at, format!("bad value for '{k}'")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| err(conf_at, format!("bad value for '{k}'")))
        };

        let (at, raw) = section(b"DICT")?;
        let dict = Dictionary::new(parse_matrix(raw).ok_or_else(|| err(at, "bad DICT block".into()))?)?;
        let (at, raw) = section(b"ANCH")?;
        let anchor = Dictionary::new(parse_matrix(raw).ok_or_else(|| err(at, "bad ANCH block".into()))?)?;
        let (at, raw) = section(b"BASI")?;
        let basis = parse_matrix(raw).ok_or_else(|| err(at, "bad BASI block".into()))?;

        let variant: Variant = get("variant")?.parse()?;
        let heat_t = match get("heat_t")? {
            "auto" => None,
            t => Some(
                t.parse()
                    .map_err(|_| err(conf_at, "bad value for 'heat_t'".into()))?,
            ),
        };
        let graph = GraphSpec {
            variant,
            knn: int("knn")?,
            heat_t,
            k1: int("k1")?,
            k2: int("k2")?,
            alpha: num("alpha")?,
            alpha1: num("alpha1")?,
            alpha2: num("alpha2")?,
            mu_mvr: num("mu_mvr")?,
            rho1: num("rho1")?,
            rho2: num("rho2")?,
            targets: None,
        };
        if int("rank")? != basis.ncols() {
            return Err(err(conf_at, "rank disagrees with basis".into()));
        }
        let prior = ElasticNetPrior::new(num("lambda1")?, num("lambda2")?)?;
        let params = SparLowParams::new(num("sigma")?, num("mu1")?, num("mu2")?, anchor)?;
        let proj = Projector::from_basis(&basis)?;
        let model = Model {
            dict,
            proj,
            basis,
            prior,
            params,
            graph,
        };
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_bytes(&fs::read(path)?, &path.display().to_string())
    }
}

fn tag_name(tag: &[u8; 4]) -> String {
    String::from_utf8_lossy(tag).into_owned()
}

fn push_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn matrix_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * m.len());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_matrix(raw: &[u8]) -> Option<DMatrix<f64>> {
    if raw.len() < 8 {
        return None;
    }
    let rows = u32::from_le_bytes(raw[0..4].try_into().ok()?) as usize;
    let cols = u32::from_le_bytes(raw[4..8].try_into().ok()?) as usize;
    if raw.len() != 8 + 8 * rows.checked_mul(cols)? {
        return None;
    }
    let values = raw[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some(DMatrix::from_vec(rows, cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let d =
            Dictionary::normalized(DMatrix::from_fn(3, 4, |i, j| ((i * 4 + j) as f64).sin() + 0.3)).unwrap();
        let basis = DMatrix::from_fn(4, 2, |i, j| ((i * 2 + j) as f64 * 0.9).cos());
        let q = basis.qr().q();
        let proj = Projector::from_basis(&q).unwrap();
        let mut graph = GraphSpec::new(Variant::Slap);
        graph.heat_t = Some(0.37);
        Model::new(
            d.clone(),
            proj,
            ElasticNetPrior::new(0.2, 1e-3).unwrap(),
            SparLowParams::with_defaults(d),
            graph,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = Model::from_bytes(&m.to_bytes(), "mem").unwrap();
        assert_eq!(back.dict, m.dict);
        assert_eq!(back.basis, m.basis);
        assert_eq!(back.prior, m.prior);
        assert_eq!(back.params, m.params);
        assert_eq!(back.graph, m.graph);
        assert!((back.proj.matrix() - m.proj.matrix()).norm() < 1e-12);
    }

    #[test]
    fn header_and_truncation_errors() {
        let bytes = model().to_bytes();
        assert_eq!(&bytes[..16], MODEL_MAGIC);
        assert!(Model::from_bytes(&bytes[..bytes.len() - 3], "m").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Model::from_bytes(&bad, "m"),
            Err(SparlowError::Parse { .. })
        ));
    }

    #[test]
    fn config_is_sorted() {
        let text = model().config_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }
}
