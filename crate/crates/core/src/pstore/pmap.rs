//! Persistent ordered map.
//!
//! An AVL tree whose nodes are shared through `Arc`. Cloning a map is O(1);
//! updates copy only the root-to-leaf path (nodes that are uniquely owned are
//! mutated in place). Cursors support repeated forward seeks whose cost is
//! proportional to the distance travelled rather than the size of the map.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

type Link<K, V> = Option<Arc<Node<K, V>>>;

#[derive(Clone)]
struct Node<K, V> {
    key: K,
    val: V,
    left: Link<K, V>,
    right: Link<K, V>,
    height: u8,
    size: usize,
}

fn height<K, V>(l: &Link<K, V>) -> u8 {
    l.as_ref().map_or(0, |n| n.height)
}

fn size<K, V>(l: &Link<K, V>) -> usize {
    l.as_ref().map_or(0, |n| n.size)
}

impl<K, V> Node<K, V> {
    fn leaf(key: K, val: V) -> Self {
        Node { key, val, left: None, right: None, height: 1, size: 1 }
    }

    fn fix(&mut self) {
        self.height = 1 + height(&self.left).max(height(&self.right));
        self.size = 1 + size(&self.left) + size(&self.right);
    }

    fn balance(&self) -> i16 {
        height(&self.left) as i16 - height(&self.right) as i16
    }
}

fn rotate_right<K: Clone, V: Clone>(link: &mut Link<K, V>) {
    let mut root = link.take().expect("rotate on empty link");
    let n = Arc::make_mut(&mut root);
    let mut l = n.left.take().expect("rotate_right needs a left child");
    let lm = Arc::make_mut(&mut l);
    n.left = lm.right.take();
    n.fix();
    lm.right = Some(root);
    lm.fix();
    *link = Some(l);
}

fn rotate_left<K: Clone, V: Clone>(link: &mut Link<K, V>) {
    let mut root = link.take().expect("rotate on empty link");
    let n = Arc::make_mut(&mut root);
    let mut r = n.right.take().expect("rotate_left needs a right child");
    let rm = Arc::make_mut(&mut r);
    n.right = rm.left.take();
    n.fix();
    rm.left = Some(root);
    rm.fix();
    *link = Some(r);
}

fn rebalance<K: Clone, V: Clone>(link: &mut Link<K, V>) {
    let Some(arc) = link.as_mut() else { return };
    let n = Arc::make_mut(arc);
    n.fix();
    let b = n.balance();
    if b > 1 {
        if n.left.as_ref().map_or(0, |l| l.balance()) < 0 {
            rotate_left(&mut n.left);
        }
        rotate_right(link);
    } else if b < -1 {
        if n.right.as_ref().map_or(0, |r| r.balance()) > 0 {
            rotate_right(&mut n.right);
        }
        rotate_left(link);
    }
}

fn insert<K: Ord + Clone, V: Clone>(link: &mut Link<K, V>, key: K, val: V) -> Option<V> {
    let Some(arc) = link.as_mut() else {
        *link = Some(Arc::new(Node::leaf(key, val)));
        return None;
    };
    let n = Arc::make_mut(arc);
    let old = match key.cmp(&n.key) {
        Ordering::Less => insert(&mut n.left, key, val),
        Ordering::Greater => insert(&mut n.right, key, val),
        Ordering::Equal => return Some(std::mem::replace(&mut n.val, val)),
    };
    if old.is_none() {
        rebalance(link);
    }
    old
}

fn remove_min<K: Clone, V: Clone>(link: &mut Link<K, V>) -> (K, V) {
    let arc = link.as_mut().expect("remove_min on empty link");
    let n = Arc::make_mut(arc);
    if n.left.is_some() {
        let out = remove_min(&mut n.left);
        rebalance(link);
        out
    } else {
        let right = n.right.take();
        let node = link.take().expect("present");
        let node = Arc::try_unwrap(node).unwrap_or_else(|a| (*a).clone());
        *link = right;
        (node.key, node.val)
    }
}

fn remove<K: Ord + Clone, V: Clone, Q>(link: &mut Link<K, V>, key: &Q) -> Option<V>
where
    K: std::borrow::Borrow<Q>,
    Q: Ord + ?Sized,
{
    let arc = link.as_mut()?;
    match key.cmp(arc.key.borrow()) {
        Ordering::Less => {
            arc.left.as_ref()?;
            let n = Arc::make_mut(arc);
            let out = remove(&mut n.left, key);
            if out.is_some() {
                rebalance(link);
            }
            out
        }
        Ordering::Greater => {
            arc.right.as_ref()?;
            let n = Arc::make_mut(arc);
            let out = remove(&mut n.right, key);
            if out.is_some() {
                rebalance(link);
            }
            out
        }
        Ordering::Equal => {
            let n = Arc::make_mut(arc);
            match (n.left.is_some(), n.right.is_some()) {
                (false, _) => {
                    let right = n.right.take();
                    let node = link.take().expect("present");
                    let node = Arc::try_unwrap(node).unwrap_or_else(|a| (*a).clone());
                    *link = right;
                    Some(node.val)
                }
                (true, false) => {
                    let left = n.left.take();
                    let node = link.take().expect("present");
                    let node = Arc::try_unwrap(node).unwrap_or_else(|a| (*a).clone());
                    *link = left;
                    Some(node.val)
                }
                (true, true) => {
                    let (k, v) = remove_min(&mut n.right);
                    n.key = k;
                    let old = std::mem::replace(&mut n.val, v);
                    rebalance(link);
                    Some(old)
                }
            }
        }
    }
}

/// A persistent ordered map with O(1) cloning.
pub struct PMap<K, V> {
    root: Link<K, V>,
}

impl<K, V> Clone for PMap<K, V> {
    fn clone(&self) -> Self {
        PMap { root: self.root.clone() }
    }
}

impl<K, V> Default for PMap<K, V> {
    fn default() -> Self {
        PMap { root: None }
    }
}

impl<K: fmt::Debug, V: fmt::Debug> fmt::Debug for PMap<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

impl<K: PartialEq, V: PartialEq> PartialEq for PMap<K, V> {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().zip(other.iter()).all(|(a, b)| a == b)
    }
}

impl<K: Eq, V: Eq> Eq for PMap<K, V> {}

impl<K, V> PMap<K, V> {
    pub fn new() -> Self {
        PMap { root: None }
    }

    pub fn len(&self) -> usize {
        size(&self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    /// True when both maps share the same root node.
    pub fn ptr_eq(&self, other: &Self) -> bool {
        match (&self.root, &other.root) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    pub fn iter(&self) -> Iter<'_, K, V> {
        let mut stack = Vec::new();
        let mut cur = self.root.as_deref();
        while let Some(n) = cur {
            stack.push(n);
            cur = n.left.as_deref();
        }
        Iter { stack }
    }

    /// Least entry whose key is not `Less` according to `probe`.
    ///
    /// `probe(k)` must be monotone: `Less` for a prefix of the keys in order,
    /// then `Equal` or `Greater`.
    pub fn lower_bound_by<F>(&self, probe: F) -> Option<(&K, &V)>
    where
        F: Fn(&K) -> Ordering,
    {
        let mut best = None;
        let mut cur = self.root.as_deref();
        while let Some(n) = cur {
            if probe(&n.key) == Ordering::Less {
                cur = n.right.as_deref();
            } else {
                best = Some(n);
                cur = n.left.as_deref();
            }
        }
        best.map(|n| (&n.key, &n.val))
    }

    /// Greatest entry whose key is `Less` or `Equal` according to `probe`.
    pub fn upper_floor_by<F>(&self, probe: F) -> Option<(&K, &V)>
    where
        F: Fn(&K) -> Ordering,
    {
        let mut best = None;
        let mut cur = self.root.as_deref();
        while let Some(n) = cur {
            if probe(&n.key) == Ordering::Greater {
                cur = n.left.as_deref();
            } else {
                best = Some(n);
                cur = n.right.as_deref();
            }
        }
        best.map(|n| (&n.key, &n.val))
    }

    /// Iterate entries starting at the least key not `Less` under `probe`.
    pub fn iter_from<F>(&self, probe: F) -> Iter<'_, K, V>
    where
        F: Fn(&K) -> Ordering,
    {
        let mut stack = Vec::new();
        let mut cur = self.root.as_deref();
        while let Some(n) = cur {
            if probe(&n.key) == Ordering::Less {
                cur = n.right.as_deref();
            } else {
                stack.push(n);
                cur = n.left.as_deref();
            }
        }
        Iter { stack }
    }

    pub fn first(&self) -> Option<(&K, &V)> {
        let mut cur = self.root.as_deref()?;
        while let Some(l) = cur.left.as_deref() {
            cur = l;
        }
        Some((&cur.key, &cur.val))
    }

    pub fn last(&self) -> Option<(&K, &V)> {
        let mut cur = self.root.as_deref()?;
        while let Some(r) = cur.right.as_deref() {
            cur = r;
        }
        Some((&cur.key, &cur.val))
    }

    /// A cursor positioned before the first entry.
    pub fn cursor(&self) -> Cursor<'_, K, V> {
        Cursor { root: self.root.as_deref(), stack: Vec::new(), started: false, touches: 0 }
    }

    pub fn height(&self) -> u8 {
        height(&self.root)
    }
}

impl<K: Ord, V> PMap<K, V> {
    pub fn get<Q>(&self, key: &Q) -> Option<&V>
    where
        K: std::borrow::Borrow<Q>,
        Q: Ord + ?Sized,
    {
        let mut cur = self.root.as_deref();
        while let Some(n) = cur {
            match key.cmp(n.key.borrow()) {
                Ordering::Less => cur = n.left.as_deref(),
                Ordering::Greater => cur = n.right.as_deref(),
                Ordering::Equal => return Some(&n.val),
            }
        }
        None
    }

    pub fn contains_key<Q>(&self, key: &Q) -> bool
    where
        K: std::borrow::Borrow<Q>,
        Q: Ord + ?Sized,
    {
        self.get(key).is_some()
    }
}

impl<K: Ord + Clone, V: Clone> PMap<K, V> {
    /// Insert or replace; returns the previous value.
    pub fn insert(&mut self, key: K, val: V) -> Option<V> {
        insert(&mut self.root, key, val)
    }

    pub fn remove<Q>(&mut self, key: &Q) -> Option<V>
    where
        K: std::borrow::Borrow<Q>,
        Q: Ord + ?Sized,
    {
        remove(&mut self.root, key)
    }

    /// Return a new version with `key` bound to `val`.
    pub fn with(&self, key: K, val: V) -> Self {
        let mut m = self.clone();
        m.insert(key, val);
        m
    }

    /// Return a new version without `key`.
    pub fn without<Q>(&self, key: &Q) -> Self
    where
        K: std::borrow::Borrow<Q>,
        Q: Ord + ?Sized,
    {
        let mut m = self.clone();
        m.remove(key);
        m
    }
}

impl<K: Ord + Clone, V: Clone> FromIterator<(K, V)> for PMap<K, V> {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut m = PMap::new();
        for (k, v) in iter {
            m.insert(k, v);
        }
        m
    }
}

/// In-order iterator.
pub struct Iter<'a, K, V> {
    stack: Vec<&'a Node<K, V>>,
}

impl<'a, K, V> Iterator for Iter<'a, K, V> {
    type Item = (&'a K, &'a V);

    fn next(&mut self) -> Option<Self::Item> {
        let n = self.stack.pop()?;
        let mut cur = n.right.as_deref();
        while let Some(c) = cur {
            self.stack.push(c);
            cur = c.left.as_deref();
        }
        Some((&n.key, &n.val))
    }
}

/// Forward cursor with finger seeks.
///
/// The stack holds the current node on top followed by the ancestors at which
/// the path went left, so the remaining entries are, from the top down, each
/// stack node followed by its right subtree.
pub struct Cursor<'a, K, V> {
    root: Option<&'a Node<K, V>>,
    stack: Vec<&'a Node<K, V>>,
    started: bool,
    touches: usize,
}

impl<'a, K, V> Cursor<'a, K, V> {
    /// Number of nodes examined so far.
    pub fn touches(&self) -> usize {
        self.touches
    }

    pub fn current(&self) -> Option<(&'a K, &'a V)> {
        self.stack.last().map(|n| (&n.key, &n.val))
    }

    pub fn at_end(&self) -> bool {
        self.started && self.stack.is_empty()
    }

    fn descend<F: Fn(&K) -> Ordering>(&mut self, mut cur: Option<&'a Node<K, V>>, probe: &F) {
        while let Some(n) = cur {
            self.touches += 1;
            if probe(&n.key) == Ordering::Less {
                cur = n.right.as_deref();
            } else {
                self.stack.push(n);
                cur = n.left.as_deref();
            }
        }
    }

    /// Move to the least entry at or after the current position that is not
    /// `Less` under `probe`. Targets must be non-decreasing across calls.
    pub fn seek_by<F: Fn(&K) -> Ordering>(&mut self, probe: F) -> Option<(&'a K, &'a V)> {
        if !self.started {
            self.started = true;
            self.descend(self.root, &probe);
            return self.current();
        }
        let mut top = *self.stack.last()?;
        self.touches += 1;
        if probe(&top.key) != Ordering::Less {
            return Some((&top.key, &top.val));
        }
        loop {
            // `top` is below the target: drop it, then either skip its whole
            // right subtree (if the next ancestor is also below) or search it.
            self.stack.pop();
            if let Some(&next) = self.stack.last() {
                self.touches += 1;
                if probe(&next.key) == Ordering::Less {
                    top = next;
                    continue;
                }
            }
            self.descend(top.right.as_deref(), &probe);
            return self.current();
        }
    }

    /// Step to the next entry in order.
    pub fn advance(&mut self) -> Option<(&'a K, &'a V)> {
        if !self.started {
            self.started = true;
            let mut cur = self.root;
            while let Some(n) = cur {
                self.touches += 1;
                self.stack.push(n);
                cur = n.left.as_deref();
            }
            return self.current();
        }
        let n = self.stack.pop()?;
        let mut cur = n.right.as_deref();
        while let Some(c) = cur {
            self.touches += 1;
            self.stack.push(c);
            cur = c.left.as_deref();
        }
        self.current()
    }
}

impl<'a, K: Ord, V> Cursor<'a, K, V> {
    pub fn seek(&mut self, key: &K) -> Option<(&'a K, &'a V)> {
        self.seek_by(|k| k.cmp(key))
    }
}
