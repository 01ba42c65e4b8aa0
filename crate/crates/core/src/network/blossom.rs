//! Maximum-weight matching on general graphs with integer weights.
//!
//! Edmonds' blossom algorithm with the primal-dual bookkeeping of Galil's
//! O(n³) formulation, following the structure of Van Rantwijk's public
//! domain `mwmatching`. Vertices are `0..n`; endpoints of edge `k` are
//! numbered `2k` and `2k + 1`.

const NONE: usize = usize::MAX;

struct State<'a> {
    n: usize,
    edges: &'a [(usize, usize, i64)],
    endpoint: Vec<usize>,
    neighbend: Vec<Vec<usize>>,
    mate: Vec<usize>,
    label: Vec<u8>,
    labelend: Vec<usize>,
    inblossom: Vec<usize>,
    blossomparent: Vec<usize>,
    blossomchilds: Vec<Vec<usize>>,
    blossombase: Vec<usize>,
    blossomendps: Vec<Vec<usize>>,
    bestedge: Vec<usize>,
    blossombest: Vec<Option<Vec<usize>>>,
    unusedblossoms: Vec<usize>,
    dualvar: Vec<i64>,
    allowedge: Vec<bool>,
    queue: Vec<usize>,
}

/// Index into a blossom's child cycle, allowing negative offsets.
fn at(len: usize, j: isize) -> usize {
    j.rem_euclid(len as isize) as usize
}

impl<'a> State<'a> {
    fn slack(&self, k: usize) -> i64 {
        let (i, j, w) = self.edges[k];
        self.dualvar[i] + self.dualvar[j] - 2 * w
    }

    fn leaves(&self, b: usize, out: &mut Vec<usize>) {
        if b < self.n {
            out.push(b);
        } else {
            for &t in &self.blossomchilds[b] {
                self.leaves(t, out);
            }
        }
    }

    fn leaves_of(&self, b: usize) -> Vec<usize> {
        let mut out = Vec::new();
        self.leaves(b, &mut out);
        out
    }

    fn assign_label(&mut self, w: usize, t: u8, p: usize) {
        let b = self.inblossom[w];
        debug_assert!(self.label[w] == 0 && self.label[b] == 0);
        self.label[w] = t;
        self.label[b] = t;
        self.labelend[w] = p;
        self.labelend[b] = p;
        self.bestedge[w] = NONE;
        self.bestedge[b] = NONE;
        if t == 1 {
            let leaves = self.leaves_of(b);
            self.queue.extend(leaves);
        } else if t == 2 {
            let base = self.blossombase[b];
            let m = self.mate[base];
            debug_assert!(m != NONE);
            self.assign_label(self.endpoint[m], 1, m ^ 1);
        }
    }

    /// Traces back from `v` and `w` to find a common S-blossom base, or
    /// `NONE` when the two paths reach different roots (an augmenting path).
    fn scan_blossom(&mut self, mut v: usize, mut w: usize) -> usize {
        let mut path = Vec::new();
        let mut base = NONE;
        while v != NONE || w != NONE {
            let mut b = self.inblossom[v];
            if self.label[b] & 4 != 0 {
                base = self.blossombase[b];
                break;
            }
            debug_assert_eq!(self.label[b], 1);
            path.push(b);
            self.label[b] = 5;
            if self.labelend[b] == NONE {
                v = NONE;
            } else {
                v = self.endpoint[self.labelend[b]];
                b = self.inblossom[v];
                debug_assert_eq!(self.label[b], 2);
                v = self.endpoint[self.labelend[b]];
            }
            if w != NONE {
                std::mem::swap(&mut v, &mut w);
            }
        }
        for b in path {
            self.label[b] = 1;
        }
        base
    }

    fn add_blossom(&mut self, base: usize, k: usize) {
        let (mut v, mut w, _) = self.edges[k];
        let bb = self.inblossom[base];
        let mut bv = self.inblossom[v];
        let mut bw = self.inblossom[w];
        let b = self.unusedblossoms.pop().expect("blossom slots exhausted");
        self.blossombase[b] = base;
        self.blossomparent[b] = NONE;
        self.blossomparent[bb] = b;
        let mut path = Vec::new();
        let mut endps = Vec::new();
        while bv != bb {
            self.blossomparent[bv] = b;
            path.push(bv);
            endps.push(self.labelend[bv]);
            v = self.endpoint[self.labelend[bv]];
            bv = self.inblossom[v];
        }
        path.push(bb);
        path.reverse();
        endps.reverse();
        endps.push(2 * k);
        while bw != bb {
            self.blossomparent[bw] = b;
            path.push(bw);
            endps.push(self.labelend[bw] ^ 1);
            w = self.endpoint[self.labelend[bw]];
            bw = self.inblossom[w];
        }
        self.label[b] = 1;
        self.labelend[b] = self.labelend[bb];
        self.dualvar[b] = 0;
        self.blossomchilds[b] = path.clone();
        self.blossomendps[b] = endps;
        for v in self.leaves_of(b) {
            if self.label[self.inblossom[v]] == 2 {
                self.queue.push(v);
            }
            self.inblossom[v] = b;
        }
        let mut bestedgeto = vec![NONE; 2 * self.n];
        for &bv in &path {
            let nblists: Vec<Vec<usize>> = match self.blossombest[bv].take() {
                Some(list) => vec![list],
                None => self
                    .leaves_of(bv)
                    .into_iter()
                    .map(|v| self.neighbend[v].iter().map(|p| p / 2).collect())
                    .collect(),
            };
            for list in nblists {
                for k in list {
                    let (mut i, mut j, _) = self.edges[k];
                    if self.inblossom[j] == b {
                        std::mem::swap(&mut i, &mut j);
                    }
                    let _ = i;
                    let bj = self.inblossom[j];
                    if bj != b
                        && self.label[bj] == 1
                        && (bestedgeto[bj] == NONE || self.slack(k) < self.slack(bestedgeto[bj]))
                    {
                        bestedgeto[bj] = k;
                    }
                }
            }
            self.bestedge[bv] = NONE;
        }
        let best: Vec<usize> = bestedgeto.into_iter().filter(|&k| k != NONE).collect();
        self.bestedge[b] = NONE;
        for &k in &best {
            if self.bestedge[b] == NONE || self.slack(k) < self.slack(self.bestedge[b]) {
                self.bestedge[b] = k;
            }
        }
        self.blossombest[b] = Some(best);
    }

    fn expand_blossom(&mut self, b: usize, endstage: bool) {
        let childs = self.blossomchilds[b].clone();
        for &s in &childs {
            self.blossomparent[s] = NONE;
            if s < self.n {
                self.inblossom[s] = s;
            } else if endstage && self.dualvar[s] == 0 {
                self.expand_blossom(s, endstage);
            } else {
                for v in self.leaves_of(s) {
                    self.inblossom[v] = s;
                }
            }
        }
        if !endstage && self.label[b] == 2 {
            let len = childs.len();
            let endps = self.blossomendps[b].clone();
            let entrychild = self.inblossom[self.endpoint[self.labelend[b] ^ 1]];
            let mut j = childs.iter().position(|&c| c == entrychild).unwrap() as isize;
            let (jstep, endptrick): (isize, usize) = if j & 1 == 1 {
                j -= len as isize;
                (1, 0)
            } else {
                (-1, 1)
            };
            let mut p = self.labelend[b];
            while j != 0 {
                let e1 = self.endpoint[p ^ 1];
                self.label[e1] = 0;
                let q = endps[at(len, j - endptrick as isize)];
                self.label[self.endpoint[q ^ endptrick ^ 1]] = 0;
                self.assign_label(e1, 2, p);
                self.allowedge[q / 2] = true;
                j += jstep;
                p = endps[at(len, j - endptrick as isize)] ^ endptrick;
                self.allowedge[p / 2] = true;
                j += jstep;
            }
            let bv = childs[at(len, j)];
            let e1 = self.endpoint[p ^ 1];
            self.label[e1] = 2;
            self.label[bv] = 2;
            self.labelend[e1] = p;
            self.labelend[bv] = p;
            self.bestedge[bv] = NONE;
            j += jstep;
            while childs[at(len, j)] != entrychild {
                let bv = childs[at(len, j)];
                if self.label[bv] == 1 {
                    j += jstep;
                    continue;
                }
                let mut found = NONE;
                for v in self.leaves_of(bv) {
                    if self.label[v] != 0 {
                        found = v;
                        break;
                    }
                }
                if found != NONE {
                    let v = found;
                    debug_assert_eq!(self.label[v], 2);
                    debug_assert_eq!(self.inblossom[v], bv);
                    self.label[v] = 0;
                    let m = self.mate[self.blossombase[bv]];
                    self.label[self.endpoint[m]] = 0;
                    let le = self.labelend[v];
                    self.assign_label(v, 2, le);
                }
                j += jstep;
            }
        }
        self.label[b] = 0;
        self.labelend[b] = NONE;
        self.blossomchilds[b].clear();
        self.blossomendps[b].clear();
        self.blossombase[b] = NONE;
        self.blossombest[b] = None;
        self.bestedge[b] = NONE;
        self.unusedblossoms.push(b);
    }

    /// Swaps matched and unmatched edges along the alternating path through
    /// blossom `b` from vertex `v` to the base, and rotates the blossom so
    /// that `v` becomes its new base.
    fn augment_blossom(&mut self, b: usize, v: usize) {
        let mut t = v;
        while self.blossomparent[t] != b {
            t = self.blossomparent[t];
        }
        if t >= self.n {
            self.augment_blossom(t, v);
        }
        let len = self.blossomchilds[b].len();
        let i = self.blossomchilds[b].iter().position(|&c| c == t).unwrap();
        let mut j = i as isize;
        let (jstep, endptrick): (isize, usize) = if i & 1 == 1 {
            j -= len as isize;
            (1, 0)
        } else {
            (-1, 1)
        };
        while j != 0 {
            j += jstep;
            let t = self.blossomchilds[b][at(len, j)];
            let p = self.blossomendps[b][at(len, j - endptrick as isize)] ^ endptrick;
            if t >= self.n {
                self.augment_blossom(t, self.endpoint[p]);
            }
            j += jstep;
            let t = self.blossomchilds[b][at(len, j)];
            if t >= self.n {
                self.augment_blossom(t, self.endpoint[p ^ 1]);
            }
            self.mate[self.endpoint[p]] = p ^ 1;
            self.mate[self.endpoint[p ^ 1]] = p;
        }
        self.blossomchilds[b].rotate_left(i);
        self.blossomendps[b].rotate_left(i);
        self.blossombase[b] = self.blossombase[self.blossomchilds[b][0]];
        debug_assert_eq!(self.blossombase[b], v);
    }

    fn augment_matching(&mut self, k: usize) {
        let (v, w, _) = self.edges[k];
        for (mut s, mut p) in [(v, 2 * k + 1), (w, 2 * k)] {
            loop {
                let bs = self.inblossom[s];
                debug_assert_eq!(self.label[bs], 1);
                if bs >= self.n {
                    self.augment_blossom(bs, s);
                }
                self.mate[s] = p;
                if self.labelend[bs] == NONE {
                    break;
                }
                let t = self.endpoint[self.labelend[bs]];
                let bt = self.inblossom[t];
                debug_assert_eq!(self.label[bt], 2);
                s = self.endpoint[self.labelend[bt]];
                let j = self.endpoint[self.labelend[bt] ^ 1];
                debug_assert_eq!(self.blossombase[bt], t);
                if bt >= self.n {
                    self.augment_blossom(bt, j);
                }
                self.mate[j] = self.labelend[bt];
                p = self.labelend[bt] ^ 1;
            }
        }
    }
}

/// Maximum-weight matching. Returns `mate[v]`, the vertex matched to `v`,
/// or `None`. Edges with non-positive weight are never useful and may be
/// omitted by the caller; self-loops are ignored.
pub fn max_weight_matching(n: usize, edges: &[(usize, usize, i64)]) -> Vec<Option<usize>> {
    let edges: Vec<(usize, usize, i64)> =
        edges.iter().copied().filter(|&(i, j, _)| i != j).collect();
    if n == 0 || edges.is_empty() {
        return vec![None; n];
    }
    let maxweight = edges.iter().map(|e| e.2).max().unwrap().max(0);
    let mut endpoint = Vec::with_capacity(2 * edges.len());
    let mut neighbend = vec![Vec::new(); n];
    for (k, &(i, j, _)) in edges.iter().enumerate() {
        assert!(i < n && j < n, "edge endpoint out of range");
        endpoint.push(i);
        endpoint.push(j);
        neighbend[i].push(2 * k + 1);
        neighbend[j].push(2 * k);
    }
    let mut s = State {
        n,
        edges: &edges,
        endpoint,
        neighbend,
        mate: vec![NONE; n],
        label: vec![0; 2 * n],
        labelend: vec![NONE; 2 * n],
        inblossom: (0..n).collect(),
        blossomparent: vec![NONE; 2 * n],
        blossomchilds: vec![Vec::new(); 2 * n],
        blossombase: (0..n).chain(std::iter::repeat_n(NONE, n)).collect(),
        blossomendps: vec![Vec::new(); 2 * n],
        bestedge: vec![NONE; 2 * n],
        blossombest: vec![None; 2 * n],
        unusedblossoms: (n..2 * n).rev().collect(),
        dualvar: std::iter::repeat_n(maxweight, n)
            .chain(std::iter::repeat_n(0, n))
            .collect(),
        allowedge: vec![false; edges.len()],
        queue: Vec::new(),
    };

    for _stage in 0..n {
        s.label.iter_mut().for_each(|l| *l = 0);
        s.bestedge.iter_mut().for_each(|b| *b = NONE);
        s.blossombest[n..].iter_mut().for_each(|b| *b = None);
        s.allowedge.iter_mut().for_each(|a| *a = false);
        s.queue.clear();
        for v in 0..n {
            if s.mate[v] == NONE && s.label[s.inblossom[v]] == 0 {
                s.assign_label(v, 1, NONE);
            }
        }
        let mut augmented = false;
        loop {
            while let Some(v) = s.queue.pop() {
                debug_assert_eq!(s.label[s.inblossom[v]], 1);
                let nb = s.neighbend[v].clone();
                for p in nb {
                    let k = p / 2;
                    let w = s.endpoint[p];
                    if s.inblossom[v] == s.inblossom[w] {
                        continue;
                    }
                    let mut kslack = 0;
                    if !s.allowedge[k] {
                        kslack = s.slack(k);
                        if kslack <= 0 {
                            s.allowedge[k] = true;
                        }
                    }
                    if s.allowedge[k] {
                        if s.label[s.inblossom[w]] == 0 {
                            s.assign_label(w, 2, p ^ 1);
                        } else if s.label[s.inblossom[w]] == 1 {
                            let base = s.scan_blossom(v, w);
                            if base != NONE {
                                s.add_blossom(base, k);
                            } else {
                                s.augment_matching(k);
                                augmented = true;
                                break;
                            }
                        } else if s.label[w] == 0 {
                            s.label[w] = 2;
                            s.labelend[w] = p ^ 1;
                        }
                    } else if s.label[s.inblossom[w]] == 1 {
                        let b = s.inblossom[v];
                        if s.bestedge[b] == NONE || kslack < s.slack(s.bestedge[b]) {
                            s.bestedge[b] = k;
                        }
                    } else if s.label[w] == 0
                        && (s.bestedge[w] == NONE || kslack < s.slack(s.bestedge[w]))
                    {
                        s.bestedge[w] = k;
                    }
                }
                if augmented {
                    break;
                }
            }
            if augmented {
                break;
            }

            // Dual adjustment. Type 1 ends the stage: a free vertex's dual
            // reached zero, so no further augmentation can gain weight.
            let mut deltatype = 1;
            let mut delta = s.dualvar[..n].iter().copied().min().unwrap();
            let mut deltaedge = NONE;
            let mut deltablossom = NONE;
            for v in 0..n {
                if s.label[s.inblossom[v]] == 0 && s.bestedge[v] != NONE {
                    let d = s.slack(s.bestedge[v]);
                    if d < delta {
                        delta = d;
                        deltatype = 2;
                        deltaedge = s.bestedge[v];
                    }
                }
            }
            for b in 0..2 * n {
                if s.blossomparent[b] == NONE && s.label[b] == 1 && s.bestedge[b] != NONE {
                    let d = s.slack(s.bestedge[b]) / 2;
                    if d < delta {
                        delta = d;
                        deltatype = 3;
                        deltaedge = s.bestedge[b];
                    }
                }
            }
            for b in n..2 * n {
                if s.blossombase[b] != NONE
                    && s.blossomparent[b] == NONE
                    && s.label[b] == 2
                    && s.dualvar[b] < delta
                {
                    delta = s.dualvar[b];
                    deltatype = 4;
                    deltablossom = b;
                }
            }
            for v in 0..n {
                match s.label[s.inblossom[v]] {
                    1 => s.dualvar[v] -= delta,
                    2 => s.dualvar[v] += delta,
                    _ => {}
                }
            }
            for b in n..2 * n {
                if s.blossombase[b] != NONE && s.blossomparent[b] == NONE {
                    match s.label[b] {
                        1 => s.dualvar[b] += delta,
                        2 => s.dualvar[b] -= delta,
                        _ => {}
                    }
                }
            }
            match deltatype {
                1 => break,
                2 => {
                    s.allowedge[deltaedge] = true;
                    let (mut i, j, _) = s.edges[deltaedge];
                    if s.label[s.inblossom[i]] == 0 {
                        i = j;
                    }
                    debug_assert_eq!(s.label[s.inblossom[i]], 1);
                    s.queue.push(i);
                }
                3 => {
                    s.allowedge[deltaedge] = true;
                    let (i, _, _) = s.edges[deltaedge];
                    debug_assert_eq!(s.label[s.inblossom[i]], 1);
                    s.queue.push(i);
                }
                _ => s.expand_blossom(deltablossom, false),
            }
        }
        if !augmented {
            break;
        }
        for b in n..2 * n {
            if s.blossomparent[b] == NONE
                && s.blossombase[b] != NONE
                && s.label[b] == 1
                && s.dualvar[b] == 0
            {
                s.expand_blossom(b, true);
            }
        }
    }
    s.mate
        .iter()
        .map(|&m| if m == NONE { None } else { Some(s.endpoint[m]) })
        .collect()
}
