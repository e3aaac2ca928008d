//! Loop-based reference implementations that never touch the tape.
#![allow(dead_code)]

use mtrnn::data::{build_vocab, make_synthetic_family, SyntheticConfig, Vocabulary};
use mtrnn::train::TaskData;
use mtrnn::{Architecture, Model, ModelConfig, ParamStore, TaskSpec, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn mat(store: &ParamStore, name: &str) -> Mat {
    let p = store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let (r, c) = p.shape().as_matrix();
    (0..r).map(|i| p.value.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn vector(store: &ParamStore, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).value.data().to_vec()
}

pub fn mv(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            assert_eq!(row.len(), x.len());
            row.iter().zip(x).map(|(a, b)| a * b).sum()
        })
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigv(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| sig(x)).collect()
}

pub fn tanhv(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.tanh()).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct RefLstm {
    pub w: [Mat; 4],
    pub u: [Mat; 4],
    pub v: [Vec<f64>; 3],
    pub b: [Vec<f64>; 4],
}

pub struct RefStep {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
}

impl RefLstm {
    pub fn load(store: &ParamStore, prefix: &str) -> Self {
        let m = |n: &str| mat(store, &format!("{prefix}.{n}"));
        let v = |n: &str| vector(store, &format!("{prefix}.{n}"));
        RefLstm {
            w: [m("w_i"), m("w_f"), m("w_o"), m("w_c")],
            u: [m("u_i"), m("u_f"), m("u_o"), m("u_c")],
            v: [v("v_i"), v("v_f"), v("v_o")],
            b: [v("b_i"), v("b_f"), v("b_o"), v("b_c")],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b[0].len()
    }

    /// One step; `recurrent` replaces `U_c h₋` when given.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64], recurrent: Option<Vec<f64>>) -> RefStep {
        let d = self.hidden();
        let mut i = vec![0.0; d];
        let mut f = vec![0.0; d];
        let mut o = vec![0.0; d];
        let mut c_new = vec![0.0; d];
        let mut h_new = vec![0.0; d];
        let wx: Vec<Vec<f64>> = self.w.iter().map(|w| mv(w, x)).collect();
        let uh: Vec<Vec<f64>> = self.u.iter().map(|u| mv(u, h)).collect();
        let rec = recurrent.unwrap_or_else(|| uh[3].clone());
        for k in 0..d {
            i[k] = sig(wx[0][k] + uh[0][k] + self.v[0][k] * c[k] + self.b[0][k]);
            f[k] = sig(wx[1][k] + uh[1][k] + self.v[1][k] * c[k] + self.b[1][k]);
            let cand = (wx[3][k] + rec[k] + self.b[3][k]).tanh();
            c_new[k] = f[k] * c[k] + i[k] * cand;
            o[k] = sig(wx[2][k] + uh[2][k] + self.v[2][k] * c_new[k] + self.b[2][k]);
            h_new[k] = o[k] * c_new[k].tanh();
        }
        RefStep { h: h_new, c: c_new, i, f, o }
    }

    pub fn run(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.hidden();
        let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
        xs.iter()
            .map(|x| {
                let s = self.step(x, &h, &c, None);
                h = s.h;
                c = s.c;
                h.clone()
            })
            .collect()
    }
}

pub fn rows(store: &ParamStore, table: &str, ids: &[usize]) -> Vec<Vec<f64>> {
    let m = mat(store, table);
    ids.iter().map(|&i| m[i].clone()).collect()
}

pub fn head_logits(store: &ParamStore, task: usize, h: &[f64]) -> Vec<f64> {
    add(
        &mv(&mat(store, &format!("task{task}.head.w")), h),
        &vector(store, &format!("task{task}.head.b")),
    )
}

pub fn set(store: &mut ParamStore, name: &str, value: Tensor) {
    let p = store.by_name_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
    assert_eq!(p.shape(), value.shape(), "{name}");
    p.value = value;
}

pub fn zero(store: &mut ParamStore, name: &str) {
    store.by_name_mut(name).unwrap_or_else(|| panic!("no parameter {name}")).value.fill(0.0);
}

pub fn config(arch: Architecture, tasks: usize, vocab: usize, d: usize, e: usize, seed: u64) -> ModelConfig {
    let specs = (0..tasks).map(|m| TaskSpec::new(format!("t{m}"), 2 + m % 2)).collect();
    ModelConfig::new(arch, specs, vocab)
        .with_sizes(d, e, e)
        .with_seed(seed)
}

pub fn model(arch: Architecture, vocab: usize, d: usize, e: usize, seed: u64) -> Model {
    let tasks = if arch == Architecture::Single { 1 } else { 2 };
    Model::new(config(arch, tasks, vocab, d, e, seed)).unwrap()
}

pub struct Bench {
    pub vocab: Vocabulary,
    pub tasks: Vec<TaskData>,
    pub bayes: Vec<f64>,
}

pub fn synthetic(cfg: &SyntheticConfig) -> Bench {
    let family = make_synthetic_family(cfg).unwrap();
    let corpora: Vec<_> = family.corpora.iter().collect();
    let vocab = build_vocab(&corpora, 1).unwrap();
    let tasks = family.corpora.iter().map(|c| TaskData::from_corpus(c, &vocab)).collect();
    Bench {
        vocab,
        tasks,
        bayes: family.bayes_accuracy,
    }
}
