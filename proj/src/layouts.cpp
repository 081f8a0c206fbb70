#include <string>
#include <utility>
#include <vector>

// The five built-in levels. The four test variants keep the training grid's
// building, door and button and change one thing at a time: extra clutter
// (test1), heavy clutter (test2), a relocated goal inside the room (test3),
// and a goal behind the start with clutter on the learned routes (test4).

namespace augbc::detail {

namespace {

const char* kTrain = R"json({
  "name": "train",
  "difficulty": "easy",
  "door_open_duration": 40,
  "grid": [
    "################",
    "#..............#",
    "#.######.......#",
    "#.#....#.......#",
    "#.#.G..D.......#",
    "#.#....#..B....#",
    "#.######.......#",
    "#......o.......#",
    "#..............#",
    "#.S............#",
    "#..............#",
    "#..............#",
    "#..............#",
    "################"
  ],
  "corridor_a": [[8, 4], [7, 6]],
  "corridor_b": [[11, 4], [11, 11]]
})json";

const char* kTest1 = R"json({
  "name": "test1",
  "difficulty": "easy",
  "door_open_duration": 40,
  "grid": [
    "################",
    "#..............#",
    "#.######...o...#",
    "#.#....#.......#",
    "#.#.G..D.......#",
    "#.#....#..B....#",
    "#.######..o....#",
    "#......o.......#",
    "#....o.........#",
    "#.S............#",
    "#........o.....#",
    "#.....o........#",
    "#..............#",
    "################"
  ]
})json";

const char* kTest2 = R"json({
  "name": "test2",
  "difficulty": "medium",
  "door_open_duration": 40,
  "grid": [
    "################",
    "#...o.......o..#",
    "#.######.o.o...#",
    "#.#....#.o...o.#",
    "#.#.G..D.......#",
    "#.#....#..B.o..#",
    "#.######..o....#",
    "#......o.......#",
    "#....o.........#",
    "#.S.........o..#",
    "#....o...o.....#",
    "#.....o........#",
    "#..o...o....o..#",
    "################"
  ]
})json";

const char* kTest3 = R"json({
  "name": "test3",
  "difficulty": "medium",
  "door_open_duration": 40,
  "grid": [
    "################",
    "#..............#",
    "#.######.......#",
    "#.#...G#.......#",
    "#.#....D.......#",
    "#.#....#..B....#",
    "#.######.......#",
    "#...o..o.......#",
    "#........o.....#",
    "#.S............#",
    "#.....o........#",
    "#.........o....#",
    "#..............#",
    "################"
  ]
})json";

const char* kTest4 = R"json({
  "name": "test4",
  "difficulty": "hard",
  "door_open_duration": 40,
  "grid": [
    "################",
    "#..............#",
    "#.######.......#",
    "#.#....#.......#",
    "#.#....D.......#",
    "#.#....#..B....#",
    "#.######.o.....#",
    "#......o..o....#",
    "#...o..........#",
    "#.S...o........#",
    "#..............#",
    "#.G............#",
    "#..............#",
    "################"
  ]
})json";

}  // namespace

const std::vector<std::pair<std::string, std::string>>& builtin_layouts() {
  static const std::vector<std::pair<std::string, std::string>> layouts = {
      {"train", kTrain}, {"test1", kTest1}, {"test2", kTest2}, {"test3", kTest3}, {"test4", kTest4}};
  return layouts;
}

}  // namespace augbc::detail
