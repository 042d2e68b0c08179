//! Seeded filler prose from a fixed sentence bank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SENTENCES: [&str; 100] = [
    "The morning market opened before the sun was fully up.",
    "A narrow road climbs the hill behind the old school.",
    "Most of the houses on this street have green doors.",
    "The river runs slowly through the center of the town.",
    "Several boats were tied to the wooden pier at dusk.",
    "The library keeps its oldest maps in a cool back room.",
    "A light rain fell for most of the afternoon.",
    "The bakery on the corner sells bread until noon.",
    "Children played a long game of tag in the square.",
    "The clock on the station tower runs two minutes fast.",
    "A line of trees marks the edge of the eastern field.",
    "The bus to the coast leaves every hour on the hour.",
    "Someone painted the fence a pale shade of blue.",
    "The windows of the hall face the quiet courtyard.",
    "An old bridge crosses the stream near the mill.",
    "The garden behind the museum is open on weekends.",
    "Two cats slept in the shade of the parked truck.",
    "The museum shows a small collection of clocks.",
    "Fresh snow covered the path up to the lookout.",
    "The café closes early on the first day of the week.",
    "A farmer carried crates of apples to the cart.",
    "The lake was calm and reflected the low clouds.",
    "Every spring the town holds a modest music fair.",
    "The pharmacy moved to a larger building last year.",
    "The train slowed as it approached the short tunnel.",
    "A row of bicycles leaned against the brick wall.",
    "The teacher wrote the date in the top corner of the board.",
    "Wind moved through the tall grass near the shore.",
    "The post office sorts letters in the early evening.",
    "A quiet lane leads from the church to the orchard.",
    "The hotel lobby has a large window facing the hills.",
    "Old photographs hang along the corridor of the inn.",
    "The ferry crossing takes about twenty minutes.",
    "Lanterns were hung along the path for the festival.",
    "A group of walkers rested on the bench by the well.",
    "The bookshop has a small table of used novels.",
    "Smoke rose from a chimney at the far end of the village.",
    "The harbor master checks the weather each morning.",
    "A stone wall separates the two pastures.",
    "The workshop smells of sawdust and warm oil.",
    "The hallway light flickered before it settled.",
    "Fields of wheat stretched out past the last farm.",
    "The market stalls were packed away by late afternoon.",
    "A kettle whistled in the kitchen of the guest house.",
    "The town hall was built of pale yellow stone.",
    "A gull circled over the fishing boats for a while.",
    "The footpath follows the river for several miles.",
    "The shop window displayed a set of copper pans.",
    "The night train arrived a little after midnight.",
    "A small fountain stands in the middle of the plaza.",
    "The baker's son delivers loaves on a red bicycle.",
    "Snow melted from the roofs in the midday sun.",
    "The schoolyard was empty during the summer break.",
    "Thin clouds drifted slowly across the valley.",
    "A cart loaded with hay rolled past the gate.",
    "The village well has a roof of dark slate.",
    "The concert in the park started after sunset.",
    "The hardware store sells nails by the pound.",
    "A wooden sign points the way to the waterfall.",
    "The cook chopped onions for the evening soup.",
    "Rows of vines climb the south side of the hill.",
    "The guard at the gate waved the visitors through.",
    "An owl called from the woods behind the barn.",
    "The tailor repairs coats in the back of his shop.",
    "The old mill wheel no longer turns.",
    "A heavy fog rolled in from the sea at dawn.",
    "The square was lit by a ring of tall lamps.",
    "The carpenter measured the doorway twice.",
    "A herd of goats grazed on the steep slope.",
    "The museum guide spoke slowly and clearly.",
    "The path to the beach is lined with low dunes.",
    "The evening bell rang from the chapel tower.",
    "A neighbor lent us a ladder for the afternoon.",
    "The bridge was repainted at the end of summer.",
    "The orchard produces pears and a few plums.",
    "The pottery studio fires its kiln on Thursdays.",
    "A mule carried supplies up the mountain trail.",
    "The inn serves a simple breakfast of eggs and toast.",
    "The flower stall opens when the first train arrives.",
    "The canal freezes over in the coldest weeks.",
    "A tall ship was anchored just outside the bay.",
    "The council meets in the upstairs room of the hall.",
    "The lighthouse keeper climbed the stairs at dusk.",
    "A few leaves blew across the empty tennis court.",
    "The dairy delivers milk to the houses on the hill.",
    "The village green is mowed every other week.",
    "A long table was set up in the barn for supper.",
    "The bell above the shop door rang softly.",
    "The road to the next town winds along the cliffs.",
    "A painter set up an easel near the harbor wall.",
    "The shepherd counted the flock at the gate.",
    "The station café sells tea in thick white cups.",
    "A pile of firewood was stacked beside the cottage.",
    "The stream is shallow enough to cross on stones.",
    "The gardener trimmed the hedges along the drive.",
    "The weekly paper arrives on Friday mornings.",
    "A cold wind came down from the northern ridge.",
    "The watchmaker's shop has a tiny front window.",
    "Swallows nested under the eaves of the stable.",
    "The last ferry of the day leaves at seven.",
];

/// Sentences sampled with replacement, each followed by a space, until the
/// text holds at least `min_bytes` bytes. Returns the text and the byte
/// offset at which each sentence starts.
pub fn filler_sentences(seed: u64, min_bytes: usize) -> (String, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::with_capacity(min_bytes + 80);
    let mut starts = Vec::new();
    while text.len() < min_bytes {
        starts.push(text.len());
        text.push_str(SENTENCES[rng.random_range(0..SENTENCES.len())]);
        text.push(' ');
    }
    (text, starts)
}

/// Exactly `len` bytes of filler.
pub fn filler_bytes(seed: u64, len: usize) -> Vec<u8> {
    let (text, _) = filler_sentences(seed, len);
    text.into_bytes()[..len].to_vec()
}
