/// Fixed-capacity ring buffer of binary events; the oldest event is evicted
/// first once `capacity` events are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryWindow {
    capacity: usize,
    words: Vec<u64>,
    /// Slot the next event is written to.
    head: usize,
    total: u64,
}

impl BinaryWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        BinaryWindow {
            capacity,
            words: vec![0; capacity.div_ceil(64)],
            head: 0,
            total: 0,
        }
    }

    /// Window of the given capacity holding `bits` (only the last `capacity`
    /// survive).
    pub fn from_bits(capacity: usize, bits: impl IntoIterator<Item = bool>) -> Self {
        let mut w = BinaryWindow::new(capacity);
        for b in bits {
            w.push(b);
        }
        w
    }

    /// Rebuilds a window from its stored events (oldest first) and lifetime
    /// event count.
    pub fn restore(capacity: usize, bits: &[bool], total: u64) -> Option<Self> {
        if capacity == 0 || bits.len() as u64 != total.min(capacity as u64) {
            return None;
        }
        let mut w = BinaryWindow::from_bits(capacity, bits.iter().copied());
        w.total = total;
        Some(w)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Events appended over the window's lifetime.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.total.min(self.capacity as u64) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn is_full(&self) -> bool {
        self.total >= self.capacity as u64
    }

    pub fn push(&mut self, bit: bool) {
        let (w, b) = (self.head / 64, self.head % 64);
        if bit {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
        self.head += 1;
        if self.head == self.capacity {
            self.head = 0;
        }
        self.total += 1;
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
        self.head = 0;
        self.total = 0;
    }

    #[inline]
    fn slot_bit(&self, slot: usize) -> bool {
        (self.words[slot / 64] >> (slot % 64)) & 1 == 1
    }

    /// Slot of the oldest stored event.
    #[inline]
    fn start(&self) -> usize {
        if self.is_full() {
            self.head
        } else {
            0
        }
    }

    /// `i`-th oldest stored event.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len());
        let mut slot = self.start() + i;
        if slot >= self.capacity {
            slot -= self.capacity;
        }
        self.slot_bit(slot)
    }

    /// Stored events, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn to_vec(&self) -> Vec<bool> {
        self.iter().collect()
    }

    pub fn ones(&self) -> usize {
        self.iter().filter(|&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keeps_last_capacity_events() {
        let bits: Vec<bool> = (0..150).map(|i| i % 3 == 0 || i % 7 == 0).collect();
        let w = BinaryWindow::from_bits(90, bits.iter().copied());
        assert!(w.is_full());
        assert_eq!(w.len(), 90);
        assert_eq!(w.total(), 150);
        assert_eq!(w.to_vec(), bits[60..].to_vec());
    }

    #[test]
    fn partial_window_reports_length() {
        let w = BinaryWindow::from_bits(10, [true, false, true]);
        assert!(!w.is_full());
        assert_eq!(w.to_vec(), vec![true, false, true]);
    }

    proptest! {
        #[test]
        fn contents_equal_suffix(bits in proptest::collection::vec(any::<bool>(), 0..400), cap in 1usize..130) {
            let w = BinaryWindow::from_bits(cap, bits.iter().copied());
            let keep = bits.len().min(cap);
            prop_assert_eq!(w.to_vec(), bits[bits.len() - keep..].to_vec());
            prop_assert_eq!(w.is_full(), bits.len() >= cap);
        }
    }
}
