//! Internal finite-domain CSP engine: generalized arc consistency over
//! explicit tuple lists plus backtracking. Domains are bitmasks, so every
//! domain is limited to 128 values.
//!
//! Two search orders are offered. Lexicographic search branches on the
//! lowest-index open variable with values ascending, so solutions come out in
//! lexicographic order. Counting search branches on the smallest domain and
//! multiplies out variables that occur in no constraint.

use std::ops::ControlFlow;

use crate::error::{invalid, Result};
use crate::structures::{CspInstance, Structure};

pub(crate) const MAX_DOMAIN: usize = 128;

pub(crate) fn full_mask(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

pub(crate) fn mask_values(mut m: u128) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let v = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(v)
        }
    })
}

/// One constraint: a scope (variables may repeat) and the allowed tuples.
#[derive(Clone, Debug)]
pub(crate) struct Con<'a> {
    pub scope: Vec<usize>,
    pub tuples: &'a [Vec<usize>],
}

#[derive(Clone, Debug)]
pub(crate) struct Csp<'a> {
    pub domains: Vec<u128>,
    pub cons: Vec<Con<'a>>,
}

impl<'a> Csp<'a> {
    pub fn new(domains: Vec<u128>) -> Self {
        Csp { domains, cons: Vec::new() }
    }

    pub fn add(&mut self, scope: Vec<usize>, tuples: &'a [Vec<usize>]) {
        self.cons.push(Con { scope, tuples });
    }

    /// The CSP of an instance over a structure, with optional pins.
    pub fn from_instance(p: &CspInstance, h: &'a Structure, pins: &[(usize, usize)]) -> Result<Self> {
        for s in &h.sorts {
            if s.len() > MAX_DOMAIN {
                return Err(invalid(format!("sort `{}` has {} elements; the solver handles at most {MAX_DOMAIN}", s.name, s.len())));
            }
        }
        let mut domains: Vec<u128> = p.variables.iter().map(|v| full_mask(h.sorts[v.sort].len())).collect();
        for &(v, e) in pins {
            let var = p.variables.get(v).ok_or_else(|| invalid(format!("pin on unknown variable #{v}")))?;
            if e >= h.sorts[var.sort].len() {
                return Err(invalid(format!("pin {}={e} is outside sort `{}`", var.name, h.sorts[var.sort].name)));
            }
            domains[v] &= 1u128 << e;
        }
        let mut csp = Csp::new(domains);
        for c in &p.constraints {
            csp.add(c.scope.clone(), h.relations[c.relation].tuples());
        }
        Ok(csp)
    }

    fn var_cons(&self) -> Vec<Vec<usize>> {
        let mut vc = vec![Vec::new(); self.domains.len()];
        for (ci, c) in self.cons.iter().enumerate() {
            for &v in &c.scope {
                if vc[v].last() != Some(&ci) {
                    vc[v].push(ci);
                }
            }
        }
        vc
    }

    /// Establishes generalized arc consistency; false on a wipe-out.
    fn propagate(&self, doms: &mut [u128], var_cons: &[Vec<usize>], queue: &mut Vec<usize>, queued: &mut [bool]) -> bool {
        while let Some(ci) = queue.pop() {
            queued[ci] = false;
            let c = &self.cons[ci];
            let k = c.scope.len();
            let mut support = [0u128; 16];
            let mut support_vec;
            let sup: &mut [u128] = if k <= 16 {
                &mut support[..k]
            } else {
                support_vec = vec![0u128; k];
                &mut support_vec
            };
            'tuples: for t in c.tuples {
                for (pos, &v) in c.scope.iter().enumerate() {
                    if doms[v] & (1u128 << t[pos]) == 0 {
                        continue 'tuples;
                    }
                }
                // Repeated variables must take equal values.
                for i in 0..k {
                    for j in i + 1..k {
                        if c.scope[i] == c.scope[j] && t[i] != t[j] {
                            continue 'tuples;
                        }
                    }
                }
                for pos in 0..k {
                    sup[pos] |= 1u128 << t[pos];
                }
            }
            for (pos, &v) in c.scope.iter().enumerate() {
                let nd = doms[v] & sup[pos];
                if nd != doms[v] {
                    if nd == 0 {
                        doms[v] = 0;
                        return false;
                    }
                    doms[v] = nd;
                    for &cj in &var_cons[v] {
                        if cj != ci && !queued[cj] {
                            queued[cj] = true;
                            queue.push(cj);
                        }
                    }
                }
            }
        }
        true
    }

    fn initial(&self) -> Option<(Vec<u128>, Vec<Vec<usize>>)> {
        let vc = self.var_cons();
        let mut doms = self.domains.clone();
        if doms.contains(&0) {
            return None;
        }
        let mut queue: Vec<usize> = (0..self.cons.len()).rev().collect();
        let mut queued = vec![true; self.cons.len()];
        if self.propagate(&mut doms, &vc, &mut queue, &mut queued) {
            Some((doms, vc))
        } else {
            None
        }
    }

    fn assign(&self, doms: &[u128], v: usize, val: usize, vc: &[Vec<usize>]) -> Option<Vec<u128>> {
        let mut nd = doms.to_vec();
        nd[v] = 1u128 << val;
        let mut queue: Vec<usize> = vc[v].clone();
        let mut queued = vec![false; self.cons.len()];
        for &c in &queue {
            queued[c] = true;
        }
        if self.propagate(&mut nd, vc, &mut queue, &mut queued) {
            Some(nd)
        } else {
            None
        }
    }

    /// Exact number of solutions.
    pub fn count(&self) -> u128 {
        let Some((doms, vc)) = self.initial() else { return 0 };
        let mut factor: u128 = 1;
        let constrained: Vec<usize> = (0..doms.len()).filter(|&v| !vc[v].is_empty()).collect();
        for v in 0..doms.len() {
            if vc[v].is_empty() {
                factor = factor.saturating_mul(doms[v].count_ones() as u128);
            }
        }
        if factor == 0 {
            return 0;
        }
        factor.saturating_mul(self.count_rec(&doms, &vc, &constrained))
    }

    fn count_rec(&self, doms: &[u128], vc: &[Vec<usize>], constrained: &[usize]) -> u128 {
        let mut best: Option<(u32, usize)> = None;
        for &v in constrained {
            let c = doms[v].count_ones();
            if c > 1 && best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, v));
            }
        }
        let Some((_, v)) = best else { return 1 };
        let mut total: u128 = 0;
        for val in mask_values(doms[v]) {
            if let Some(nd) = self.assign(doms, v, val, vc) {
                total = total.saturating_add(self.count_rec(&nd, vc, constrained));
            }
        }
        total
    }

    /// Visits all solutions in lexicographic order.
    pub fn for_each<F: FnMut(&[usize]) -> ControlFlow<()>>(&self, mut visit: F) {
        let Some((doms, vc)) = self.initial() else { return };
        let mut buf = vec![0usize; doms.len()];
        let _ = self.lex_rec(&doms, &vc, 0, &mut buf, &mut visit);
    }

    fn lex_rec<F: FnMut(&[usize]) -> ControlFlow<()>>(
        &self,
        doms: &[u128],
        vc: &[Vec<usize>],
        start: usize,
        buf: &mut Vec<usize>,
        visit: &mut F,
    ) -> ControlFlow<()> {
        let mut v = start;
        while v < doms.len() && doms[v].count_ones() == 1 {
            v += 1;
        }
        if v == doms.len() {
            for (i, d) in doms.iter().enumerate() {
                buf[i] = d.trailing_zeros() as usize;
            }
            return visit(buf);
        }
        for val in mask_values(doms[v]) {
            if let Some(nd) = self.assign(doms, v, val, vc) {
                self.lex_rec(&nd, vc, v, buf, visit)?;
            }
        }
        ControlFlow::Continue(())
    }

    /// All solutions in lexicographic order, failing past `limit`.
    pub fn solutions(&self, limit: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::new();
        let mut over = false;
        self.for_each(|s| {
            if out.len() >= limit {
                over = true;
                return ControlFlow::Break(());
            }
            out.push(s.to_vec());
            ControlFlow::Continue(())
        });
        if over {
            crate::error::guard("number of solutions", limit as u128 + 1, limit as u128)?;
        }
        Ok(out)
    }

    /// Lexicographically first solution.
    #[cfg(test)]
    pub fn first(&self) -> Option<Vec<usize>> {
        let mut found = None;
        self.for_each(|s| {
            found = Some(s.to_vec());
            ControlFlow::Break(())
        });
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::digits;

    fn brute(n: usize, vars: usize, cons: &[(Vec<usize>, Vec<Vec<usize>>)]) -> Vec<Vec<usize>> {
        (0..n.pow(vars as u32))
            .map(|i| digits(i, n, vars))
            .filter(|a| {
                cons.iter().all(|(s, ts)| {
                    let t: Vec<usize> = s.iter().map(|&v| a[v]).collect();
                    ts.contains(&t)
                })
            })
            .collect()
    }

    #[test]
    fn agrees_with_brute_force_including_repeated_variables() {
        let neq: Vec<Vec<usize>> = vec![vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 2], vec![2, 0], vec![2, 1]];
        let le: Vec<Vec<usize>> = vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![0, 2], vec![1, 2], vec![2, 2]];
        let cases: Vec<Vec<(Vec<usize>, Vec<Vec<usize>>)>> = vec![
            vec![(vec![0, 1], neq.clone()), (vec![1, 2], neq.clone()), (vec![2, 0], neq.clone())],
            vec![(vec![0, 1], le.clone()), (vec![1, 1], le.clone()), (vec![2, 2], neq.clone())],
            vec![(vec![0, 1], le.clone()), (vec![1, 3], le.clone())],
            vec![],
        ];
        for cons in cases {
            let mut csp = Csp::new(vec![full_mask(3); 4]);
            for (s, t) in &cons {
                csp.add(s.clone(), t);
            }
            let expected = brute(3, 4, &cons);
            assert_eq!(csp.count(), expected.len() as u128);
            assert_eq!(csp.solutions(1000).unwrap(), expected);
        }
    }

    #[test]
    fn empty_domain_has_no_solutions() {
        let csp = Csp::new(vec![full_mask(2), 0]);
        assert_eq!(csp.count(), 0);
        assert!(csp.first().is_none());
    }
}
