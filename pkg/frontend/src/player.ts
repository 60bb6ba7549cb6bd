// Audio playback behind a tiny interface so component tests can count
// plays without a real audio stack.

export interface Player {
  play(): Promise<void>;
  readonly playCount: number;
}

export type PlayerFactory = (url: string) => Player;

class HtmlAudioPlayer implements Player {
  private audio: HTMLAudioElement;
  private count = 0;

  constructor(url: string) {
    this.audio = new Audio(url);
    this.audio.preload = "auto"; // fetch up front: no rating-while-buffering bias
  }

  async play(): Promise<void> {
    this.audio.currentTime = 0;
    await this.audio.play();
    this.count += 1;
  }

  get playCount(): number {
    return this.count;
  }
}

export const htmlAudioPlayerFactory: PlayerFactory = (url) => new HtmlAudioPlayer(url);
