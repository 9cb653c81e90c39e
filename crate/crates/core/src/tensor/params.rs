use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
}

/// Named trainable tensors of one network, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    role: Role,
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new(role: Role) -> Self {
        ParamStore {
            role,
            entries: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn name(&self, index: usize) -> &str {
        &self.entries[index].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Sum of squares of every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t.dot(t)).sum()
    }

    pub fn write_to(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        let entries: Vec<(&str, &Tensor)> = self.iter().collect();
        io::write_dsr(w, &entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(&str, &Tensor)> = self.iter().collect();
        io::save_dsr(path, &entries)
    }

    pub fn load(path: &Path, role: Role) -> Result<Self> {
        let mut store = ParamStore::new(role);
        for (name, t) in io::load_dsr(path)? {
            store.insert(name, t)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_names() {
        let mut p = ParamStore::new(Role::Decoder);
        p.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[3])).is_err());
        p.insert("b", Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(p.num_scalars(), 8);
        assert_eq!(p.name(1), "b");
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.dsr");
        let mut p = ParamStore::new(Role::Encoder);
        p.insert("enc.w", Tensor::new(vec![2, 1, 1, 1], vec![0.1 + 0.2, -1e-300]).unwrap())
            .unwrap();
        p.insert("enc.shift", Tensor::new(vec![2], vec![f64::MAX, -0.0]).unwrap()).unwrap();
        p.save(&path).unwrap();
        let q = ParamStore::load(&path, Role::Encoder).unwrap();
        assert_eq!(p.len(), q.len());
        for ((n1, t1), (n2, t2)) in p.iter().zip(q.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }
}
