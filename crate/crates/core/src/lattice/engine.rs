//! Exact inference on the cross product of participant-to-detection tuples
//! and per-word HMM state tuples.
//!
//! Frame `t` holds `J_t * Q` nodes: `J_t = D_t^P` detection tuples
//! (participant 0 varies fastest) times `Q = prod_l I_l` state tuples (word 0
//! varies fastest). Word transitions are applied one axis at a time, so the
//! cost per frame is `J_{t-1} * J_t * Q * L` rather than quadratic in `Q`.
//!
//! The forward and backward passes run in linear space with per-frame
//! scaling; the returned likelihood is the sum of log scale factors.

use crate::error::{Error, Result};
use crate::grammar::SentenceTemplate;
use crate::lexicon::{Distributions, Lexicon};
use crate::worldsim::VideoClip;

use super::bank::{combo_radix, ClipBank};
use super::track::coherence;
use super::LatticeConfig;

/// Per-frame table of one word's emission probabilities and feature bins for
/// every combination of its arguments' (previous, current) detections.
struct FrameTables<'b> {
    words: Vec<WordFrame<'b>>,
    /// Combo index parts per previous tuple (all zero at frame 0).
    prev: Vec<usize>,
    /// Combo index parts per current tuple.
    cur: Vec<usize>,
}

impl FrameTables<'_> {
    fn combo(&self, jp: usize, j: usize, l: usize) -> usize {
        let words = self.words.len();
        self.prev[jp * words + l] + self.cur[j * words + l]
    }
}

struct WordFrame<'b> {
    /// `probs[combo * I + i]`
    probs: Vec<f64>,
    /// `bins[combo * N + n]`
    bins: &'b [usize],
}

pub(crate) struct Lattice<'a> {
    bank: &'a ClipBank<'a>,
    clip: &'a VideoClip,
    lexicon: &'a Lexicon,
    template: &'a SentenceTemplate,
    participants: usize,
    states: Vec<usize>,
    strides: Vec<usize>,
    q_count: usize,
    /// `state_of[l][s]`: state of word `l` in state tuple `s`.
    state_of: Vec<Vec<usize>>,
    kappa: f64,
    /// `tuples[t][j * P + p]`: detection of participant `p` in tuple `j`.
    tuples: Vec<Vec<usize>>,
}

/// Posterior statistics of one word occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPosterior {
    pub entry: usize,
    /// `gamma[t][i]`
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t - 1][i][k]`: transition from state `i` at `t - 1` to `k` at `t`.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// Expected output-bin occupancy summed over frames, `occupancy[i][n][h]`.
    pub occupancy: Vec<Vec<Vec<f64>>>,
}

impl WordPosterior {
    /// Expected parameter-use counts in lexicon layout.
    pub fn counts(&self) -> Distributions {
        let states = self.gamma.first().map_or(0, Vec::len);
        let mut transition = vec![vec![0.0; states]; states];
        for frame in &self.xi {
            for (row, src) in transition.iter_mut().zip(frame) {
                for (a, b) in row.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        Distributions {
            initial: self.gamma.first().cloned().unwrap_or_default(),
            transition,
            output: self.occupancy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub log_likelihood: f64,
    pub words: Vec<WordPosterior>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub log_score: f64,
    /// `assignment[t][p]`: detection index of participant `p` at frame `t`.
    pub assignment: Vec<Vec<usize>>,
    /// `states[l][t]`
    pub states: Vec<Vec<usize>>,
}

fn pow(base: usize, exp: usize) -> usize {
    (0..exp).fold(1usize, |acc, _| acc.saturating_mul(base))
}

impl<'a> Lattice<'a> {
    pub(crate) fn new(
        bank: &'a ClipBank<'a>,
        template: &'a SentenceTemplate,
        lexicon: &'a Lexicon,
        config: &LatticeConfig,
    ) -> Result<Self> {
        template.check(lexicon)?;
        bank.check(lexicon)?;
        let clip = bank.clip;
        if template.participant_count > config.max_participants {
            return Err(Error::ComplexityCap(format!(
                "{} participants exceed the cap of {}",
                template.participant_count, config.max_participants
            )));
        }
        if template.len() > config.max_words {
            return Err(Error::ComplexityCap(format!(
                "{} words exceed the cap of {}",
                template.len(),
                config.max_words
            )));
        }
        if clip.frames.is_empty() || clip.frames.iter().any(Vec::is_empty) {
            return Err(Error::Malformed(format!("clip {} has an empty frame", clip.clip_id)));
        }
        let states: Vec<usize> = template
            .words
            .iter()
            .map(|&m| lexicon.pos_of(m).state_count)
            .collect();
        let mut strides = Vec::with_capacity(states.len());
        let mut q_count = 1usize;
        for &s in &states {
            strides.push(q_count);
            q_count *= s;
        }
        let participants = template.participant_count;
        let tuples = clip
            .frames
            .iter()
            .map(|f| {
                let d = f.len();
                let count = pow(d, participants);
                let mut out = Vec::with_capacity(count * participants);
                for j in 0..count {
                    let mut rest = j;
                    for _ in 0..participants {
                        out.push(rest % d);
                        rest /= d;
                    }
                }
                out
            })
            .collect();
        let state_of = strides
            .iter()
            .zip(&states)
            .map(|(&st, &dim)| (0..q_count).map(|s| (s / st) % dim).collect())
            .collect();
        Ok(Lattice {
            state_of,
            bank,
            tuples,
            clip,
            lexicon,
            template,
            participants: template.participant_count,
            states,
            strides,
            q_count,
            kappa: config.kappa,
        })
    }

    fn frames(&self) -> usize {
        self.clip.frames.len()
    }

    fn det_count(&self, t: usize) -> usize {
        self.clip.frames[t].len()
    }

    fn tuple_count(&self, t: usize) -> usize {
        if self.participants == 0 {
            1
        } else {
            self.tuples[t].len() / self.participants
        }
    }

    fn det_of(&self, t: usize, j: usize, p: usize) -> usize {
        self.tuples[t][j * self.participants + p]
    }

    fn decode(&self, t: usize, j: usize) -> Vec<usize> {
        (0..self.participants).map(|p| self.det_of(t, j, p)).collect()
    }

    fn node_weights(&self, t: usize) -> Vec<f64> {
        (0..self.tuple_count(t))
            .map(|j| {
                (0..self.participants)
                    .map(|p| self.clip.frames[t][self.det_of(t, j, p)].strength)
                    .product()
            })
            .collect()
    }

    /// `coh[jp * J_t + j]` for frame `t >= 1`.
    fn coherence_table(&self, t: usize) -> Vec<f64> {
        let (dp, dc) = (self.det_count(t - 1), self.det_count(t));
        let mut pair = vec![0.0; dp * dc];
        for a in 0..dp {
            for b in 0..dc {
                pair[a * dc + b] = coherence(&self.clip.frames[t - 1][a], &self.clip.frames[t][b], self.kappa);
            }
        }
        let (jp_count, j_count) = (self.tuple_count(t - 1), self.tuple_count(t));
        let mut out = vec![1.0; jp_count * j_count];
        for jp in 0..jp_count {
            for j in 0..j_count {
                out[jp * j_count + j] = (0..self.participants)
                    .map(|p| pair[self.det_of(t - 1, jp, p) * dc + self.det_of(t, j, p)])
                    .product();
            }
        }
        out
    }

    fn combo_parts(&self, t: usize) -> (Vec<usize>, Vec<usize>) {
        let radix = combo_radix(self.clip, t);
        let dc = self.det_count(t);
        let part = |frame: usize, count: usize, mul: usize| {
            let mut out = Vec::with_capacity(count * self.template.len());
            for j in 0..count {
                for args in &self.template.args {
                    let mut scale = mul;
                    let mut c = 0;
                    for &p in args {
                        c += self.det_of(frame, j, p) * scale;
                        scale *= radix;
                    }
                    out.push(c);
                }
            }
            out
        };
        let cur = part(t, self.tuple_count(t), 1);
        let prev = if t == 0 {
            vec![0; self.template.len()]
        } else {
            part(t - 1, self.tuple_count(t - 1), dc)
        };
        (prev, cur)
    }

    fn word_frame(&self, t: usize, l: usize) -> Result<WordFrame<'a>> {
        let m = self.template.words[l];
        let pos_index = self.lexicon.entries[m].pos;
        let pos = &self.lexicon.pos_table[pos_index];
        let dists = &self.lexicon.entries[m].dists;
        let bins = self.bank.bins(pos_index, t)?;
        let n_feat = pos.feature_count();
        let i_count = pos.state_count;
        let combos = if n_feat == 0 {
            combo_radix(self.clip, t).pow(pos.arity as u32)
        } else {
            bins.len() / n_feat
        };
        let mut probs = vec![1.0; combos * i_count];
        for (i, out) in dists.output.iter().enumerate() {
            for c in 0..combos {
                let x = &bins[c * n_feat..(c + 1) * n_feat];
                probs[c * i_count + i] = x.iter().zip(out).map(|(&h, b)| b[h]).product();
            }
        }
        Ok(WordFrame { probs, bins })
    }

    fn word_frames(&self, t: usize) -> Result<FrameTables<'a>> {
        let (prev, cur) = self.combo_parts(t);
        Ok(FrameTables {
            words: (0..self.template.len()).map(|l| self.word_frame(t, l)).collect::<Result<_>>()?,
            prev,
            cur,
        })
    }

    /// Joint emission over state tuples for one tuple pair (`jp` is 0 at
    /// frame 0); `out` has length `Q`.
    fn emission(&self, tables: &FrameTables, jp: usize, j: usize, out: &mut [f64]) {
        out[0] = 1.0;
        let mut len = 1;
        for (l, table) in tables.words.iter().enumerate() {
            let i_count = self.states[l];
            let c = tables.combo(jp, j, l);
            let e = &table.probs[c * i_count..(c + 1) * i_count];
            for i in (0..i_count).rev() {
                let ei = e[i];
                for q in 0..len {
                    out[i * len + q] = out[q] * ei;
                }
            }
            len *= i_count;
        }
    }

    fn initial_vector(&self) -> Vec<f64> {
        let mut v = vec![1.0; self.q_count];
        for (l, &m) in self.template.words.iter().enumerate() {
            let a0 = &self.lexicon.entries[m].dists.initial;
            for (q, x) in v.iter_mut().enumerate() {
                *x *= a0[(q / self.strides[l]) % self.states[l]];
            }
        }
        v
    }

    fn transition(&self, l: usize) -> &[Vec<f64>] {
        &self.lexicon.entries[self.template.words[l]].dists.transition
    }

    /// `out[.. k ..] = sum_i v[.. i ..] a_l(i, k)` along word axis `l`.
    fn forward_axis(&self, l: usize, v: &[f64], out: &mut [f64]) {
        let (stride, dim) = (self.strides[l], self.states[l]);
        let a = self.transition(l);
        let block = stride * dim;
        for outer in (0..self.q_count).step_by(block) {
            for inner in 0..stride {
                let b = outer + inner;
                for k in 0..dim {
                    out[b + k * stride] = (0..dim).map(|i| v[b + i * stride] * a[i][k]).sum();
                }
            }
        }
    }

    /// `out[.. i ..] = sum_k a_l(i, k) v[.. k ..]` along word axis `l`.
    fn backward_axis(&self, l: usize, v: &[f64], out: &mut [f64]) {
        let (stride, dim) = (self.strides[l], self.states[l]);
        let a = self.transition(l);
        let block = stride * dim;
        for outer in (0..self.q_count).step_by(block) {
            for inner in 0..stride {
                let b = outer + inner;
                for i in 0..dim {
                    out[b + i * stride] = (0..dim).map(|k| a[i][k] * v[b + k * stride]).sum();
                }
            }
        }
    }

    /// Applies every word's transition (optionally skipping one word),
    /// leaving the result in `cur`.
    fn propagate_into(&self, cur: &mut Vec<f64>, tmp: &mut Vec<f64>, skip: Option<usize>, backward: bool) {
        tmp.resize(cur.len(), 0.0);
        for l in 0..self.template.len() {
            if Some(l) == skip || self.states[l] == 0 {
                continue;
            }
            if backward {
                self.backward_axis(l, cur, tmp);
            } else {
                self.forward_axis(l, cur, tmp);
            }
            std::mem::swap(cur, tmp);
        }
    }

    fn frame0(&self) -> Result<Vec<f64>> {
        let tables = self.word_frames(0)?;
        let w = self.node_weights(0);
        let init = self.initial_vector();
        let q = self.q_count;
        let mut alpha = vec![0.0; self.tuple_count(0) * q];
        let mut e = vec![0.0; q];
        for (j, &wj) in w.iter().enumerate() {
            self.emission(&tables, 0, j, &mut e);
            for s in 0..q {
                alpha[j * q + s] = wj * init[s] * e[s];
            }
        }
        Ok(alpha)
    }

    /// `trans[jp * Q + q] = sum_{q'} alpha[jp, q'] A(q', q)`
    fn propagate_frame(&self, alpha: &[f64], t_prev: usize) -> Vec<f64> {
        let q = self.q_count;
        let mut out = vec![0.0; alpha.len()];
        let (mut cur, mut tmp) = (Vec::with_capacity(q), Vec::with_capacity(q));
        for jp in 0..self.tuple_count(t_prev) {
            let row = &alpha[jp * q..(jp + 1) * q];
            if row.iter().all(|&x| x == 0.0) {
                continue;
            }
            cur.clear();
            cur.extend_from_slice(row);
            self.propagate_into(&mut cur, &mut tmp, None, false);
            out[jp * q..(jp + 1) * q].copy_from_slice(&cur);
        }
        out
    }

    /// Unnormalized forward values at frame `t >= 1` from propagated `trans`.
    fn step(&self, t: usize, trans: &[f64], tables: &FrameTables, coh: &[f64], w: &[f64]) -> Vec<f64> {
        let q = self.q_count;
        let (jp_count, j_count) = (self.tuple_count(t - 1), self.tuple_count(t));
        let mut alpha = vec![0.0; j_count * q];
        let mut e = vec![0.0; q];
        for jp in 0..jp_count {
            let tr = &trans[jp * q..(jp + 1) * q];
            if tr.iter().all(|&x| x == 0.0) {
                continue;
            }
            for j in 0..j_count {
                let f = coh[jp * j_count + j] * w[j];
                if f == 0.0 {
                    continue;
                }
                self.emission(tables, jp, j, &mut e);
                let dst = &mut alpha[j * q..(j + 1) * q];
                for s in 0..q {
                    dst[s] += f * e[s] * tr[s];
                }
            }
        }
        alpha
    }

    /// Log of the total lattice weight; `-inf` when no path has positive weight.
    pub(crate) fn forward(&self) -> Result<f64> {
        let mut alpha = self.frame0()?;
        let mut log_z = 0.0;
        for t in 0..self.frames() {
            if t > 0 {
                let trans = self.propagate_frame(&alpha, t - 1);
                let tables = self.word_frames(t)?;
                alpha = self.step(t, &trans, &tables, &self.coherence_table(t), &self.node_weights(t));
            }
            let c: f64 = alpha.iter().sum();
            if !(c > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            log_z += c.ln();
            alpha.iter_mut().for_each(|x| *x /= c);
        }
        Ok(log_z)
    }

    /// Forward-backward posteriors for every word occurrence.
    pub(crate) fn posteriors(&self) -> Result<Posteriors> {
        let frames = self.frames();
        let q = self.q_count;
        let words = self.template.len();

        // forward, keeping normalized alphas, propagated alphas and scales
        let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(frames);
        let mut transes: Vec<Vec<f64>> = Vec::with_capacity(frames);
        let mut tables_all: Vec<FrameTables<'a>> = Vec::with_capacity(frames);
        let mut cohs: Vec<Vec<f64>> = Vec::with_capacity(frames);
        let mut weights: Vec<Vec<f64>> = Vec::with_capacity(frames);
        let mut scales = Vec::with_capacity(frames);
        for t in 0..frames {
            let tables = self.word_frames(t)?;
            let w = self.node_weights(t);
            let (mut alpha, trans, coh) = if t == 0 {
                (self.frame0()?, Vec::new(), Vec::new())
            } else {
                let trans = self.propagate_frame(&alphas[t - 1], t - 1);
                let coh = self.coherence_table(t);
                (self.step(t, &trans, &tables, &coh, &w), trans, coh)
            };
            let c: f64 = alpha.iter().sum();
            if !(c > 0.0) {
                return Err(Error::NonFinite(format!(
                    "sentence has zero likelihood on clip {} (frame {t})",
                    self.clip.clip_id
                )));
            }
            alpha.iter_mut().for_each(|x| *x /= c);
            alphas.push(alpha);
            transes.push(trans);
            tables_all.push(tables);
            cohs.push(coh);
            weights.push(w);
            scales.push(c);
        }
        let log_likelihood = scales.iter().map(|c| c.ln()).sum();

        let mut out: Vec<WordPosterior> = (0..words)
            .map(|l| {
                let m = self.template.words[l];
                let pos = self.lexicon.pos_of(m);
                let i = pos.state_count;
                WordPosterior {
                    entry: m,
                    gamma: vec![vec![0.0; i]; frames],
                    xi: vec![vec![vec![0.0; i]; i]; frames.saturating_sub(1)],
                    occupancy: vec![pos.bins.iter().map(|&z| vec![0.0; z]).collect(); i],
                }
            })
            .collect();

        let mut beta = vec![1.0; self.tuple_count(frames - 1) * q];
        let mut e = vec![0.0; q];
        let (mut partial, mut scratch) = (Vec::with_capacity(q), Vec::with_capacity(q));
        for t in (0..frames).rev() {
            // state occupancy at frame t
            let gamma_t: Vec<f64> = alphas[t].iter().zip(&beta).map(|(a, b)| a * b).collect();
            for (l, wp) in out.iter_mut().enumerate() {
                let map = &self.state_of[l];
                for block in gamma_t.chunks_exact(q) {
                    for (&g, &i) in block.iter().zip(map) {
                        wp.gamma[t][i] += g;
                    }
                }
            }
            let mut acc: Vec<Vec<f64>> = tables_all[t].words.iter().map(|w| vec![0.0; w.probs.len()]).collect();
            if t == 0 {
                for j in 0..self.tuple_count(0) {
                    let g = &gamma_t[j * q..(j + 1) * q];
                    self.add_occupancy(&mut acc, &tables_all[0], 0, j, g);
                }
                self.flush_occupancy(&mut out, &tables_all[0], &acc);
                break;
            }
            let c = scales[t];
            let (jp_count, j_count) = (self.tuple_count(t - 1), self.tuple_count(t));
            let tables = &tables_all[t];
            let coh = &cohs[t];
            let w = &weights[t];
            let trans = &transes[t];
            let mut u = vec![0.0; jp_count * q];
            let mut arc = vec![0.0; q];
            for jp in 0..jp_count {
                let tr = &trans[jp * q..(jp + 1) * q];
                let uj = &mut u[jp * q..(jp + 1) * q];
                for j in 0..j_count {
                    let f = coh[jp * j_count + j] * w[j];
                    if f == 0.0 {
                        continue;
                    }
                    self.emission(tables, jp, j, &mut e);
                    let bj = &beta[j * q..(j + 1) * q];
                    for s in 0..q {
                        let v = f * e[s] * bj[s];
                        uj[s] += v;
                        arc[s] = tr[s] * v / c;
                    }
                    self.add_occupancy(&mut acc, tables, jp, j, &arc);
                }
            }
            self.flush_occupancy(&mut out, tables, &acc);
            // transition posteriors
            for jp in 0..jp_count {
                let a = &alphas[t - 1][jp * q..(jp + 1) * q];
                if a.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let uj = &u[jp * q..(jp + 1) * q];
                for (l, wp) in out.iter_mut().enumerate() {
                    partial.clear();
                    partial.extend_from_slice(a);
                    self.propagate_into(&mut partial, &mut scratch, Some(l), false);
                    let (stride, dim) = (self.strides[l], self.states[l]);
                    let trans_l = self.transition(l);
                    let xi = &mut wp.xi[t - 1];
                    let map = &self.state_of[l];
                    for base in 0..q {
                        if map[base] != 0 {
                            continue;
                        }
                        for i in 0..dim {
                            let from = partial[base + i * stride];
                            if from == 0.0 {
                                continue;
                            }
                            for k in 0..dim {
                                xi[i][k] += from * trans_l[i][k] * uj[base + k * stride] / c;
                            }
                        }
                    }
                }
            }
            let mut next = vec![0.0; jp_count * q];
            for jp in 0..jp_count {
                partial.clear();
                partial.extend_from_slice(&u[jp * q..(jp + 1) * q]);
                self.propagate_into(&mut partial, &mut scratch, None, true);
                for s in 0..q {
                    next[jp * q + s] = partial[s] / c;
                }
            }
            beta = next;
        }
        Ok(Posteriors {
            log_likelihood,
            words: out,
        })
    }

    /// Adds one pair's state-tuple posterior to every word's per-combo state
    /// occupancy, `acc[l][combo * I + i]`.
    fn add_occupancy(&self, acc: &mut [Vec<f64>], tables: &FrameTables, jp: usize, j: usize, post: &[f64]) {
        for (l, a) in acc.iter_mut().enumerate() {
            let dim = self.states[l];
            let c = tables.combo(jp, j, l);
            let m = &mut a[c * dim..(c + 1) * dim];
            for (&p, &i) in post.iter().zip(&self.state_of[l]) {
                m[i] += p;
            }
        }
    }

    /// Moves per-combo occupancy into output-bin counts.
    fn flush_occupancy(&self, out: &mut [WordPosterior], tables: &FrameTables, acc: &[Vec<f64>]) {
        for ((wp, a), table) in out.iter_mut().zip(acc).zip(&tables.words) {
            let dim = wp.occupancy.len();
            let n_feat = wp.occupancy.first().map_or(0, Vec::len);
            for (c, m) in a.chunks_exact(dim).enumerate() {
                let bins = &table.bins[c * n_feat..(c + 1) * n_feat];
                for (i, &mi) in m.iter().enumerate() {
                    if mi == 0.0 {
                        continue;
                    }
                    for (n, &h) in bins.iter().enumerate() {
                        wp.occupancy[i][n][h] += mi;
                    }
                }
            }
        }
    }

    /// Max-product decoding with back-pointers over (tuple, state tuple).
    pub(crate) fn viterbi(&self) -> Result<ViterbiPath> {
        let frames = self.frames();
        let q = self.q_count;
        let init = self.initial_vector();
        let tables0 = self.word_frames(0)?;
        let w0 = self.node_weights(0);
        let mut e = vec![0.0; q];
        let mut delta = vec![f64::NEG_INFINITY; self.tuple_count(0) * q];
        for (j, &wj) in w0.iter().enumerate() {
            self.emission(&tables0, 0, j, &mut e);
            for s in 0..q {
                delta[j * q + s] = (wj * init[s] * e[s]).ln();
            }
        }
        // log A(q', q) over state tuples
        let mut log_a = vec![0.0; q * q];
        for qp in 0..q {
            for qc in 0..q {
                log_a[qp * q + qc] = (0..self.template.len())
                    .map(|l| {
                        let (st, dim) = (self.strides[l], self.states[l]);
                        self.transition(l)[(qp / st) % dim][(qc / st) % dim].ln()
                    })
                    .sum();
            }
        }
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(frames);
        back.push(Vec::new());
        for t in 1..frames {
            let tables = self.word_frames(t)?;
            let coh = self.coherence_table(t);
            let w = self.node_weights(t);
            let (jp_count, j_count) = (self.tuple_count(t - 1), self.tuple_count(t));
            let mut next = vec![f64::NEG_INFINITY; j_count * q];
            let mut ptr = vec![0usize; j_count * q];
            for j in 0..j_count {
                for jp in 0..jp_count {
                    let f = (coh[jp * j_count + j] * w[j]).ln();
                    if f == f64::NEG_INFINITY {
                        continue;
                    }
                    self.emission(&tables, jp, j, &mut e);
                    for qc in 0..q {
                        let le = e[qc].ln() + f;
                        for qp in 0..q {
                            let v = delta[jp * q + qp] + log_a[qp * q + qc] + le;
                            if v > next[j * q + qc] {
                                next[j * q + qc] = v;
                                ptr[j * q + qc] = jp * q + qp;
                            }
                        }
                    }
                }
            }
            delta = next;
            back.push(ptr);
        }
        let (mut best, mut log_score) = (0usize, f64::NEG_INFINITY);
        for (s, &v) in delta.iter().enumerate() {
            if v > log_score {
                best = s;
                log_score = v;
            }
        }
        let mut nodes = vec![0usize; frames];
        nodes[frames - 1] = best;
        for t in (1..frames).rev() {
            nodes[t - 1] = back[t][nodes[t]];
        }
        let assignment = nodes.iter().enumerate().map(|(t, &n)| self.decode(t, n / q)).collect();
        let states = (0..self.template.len())
            .map(|l| {
                nodes
                    .iter()
                    .map(|&n| ((n % q) / self.strides[l]) % self.states[l])
                    .collect()
            })
            .collect();
        Ok(ViterbiPath {
            log_score,
            assignment,
            states,
        })
    }
}
